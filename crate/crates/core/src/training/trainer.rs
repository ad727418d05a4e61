use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, TrainMode};
use super::losses::{gaussian_like, noise_schedule, stiffness_reg, NEG_ENERGY_FLOOR};
use super::TrainError;
use crate::ad::{clip_global_norm, AdError, AdamConfig, ParamStore, Tape, Tensor, Var};
use crate::deformation::{ortho_loss, BlendOp, DeformGradOp, EigenmodeNet, HandleTransforms, TRANSFORM_KEY};
use crate::energy::{EnergyDensityOp, EnergyOptions};
use crate::geometry::io::{Checkpoint, CheckpointMeta};
use crate::geometry::{
    chamfer_per_point, points_to_tensor, ChamferOp, KnnIndex, LsqGradient, LsqGradientOp, Point, RestGeometry,
    TrajectoryDataset,
};
use crate::material::{assemble_features, MaterialNet};

/// Logged values of one optimization step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub stage: u32,
    pub recon: f64,
    pub ortho: f64,
    pub w_pos: f64,
    pub w_neg: f64,
    pub neg_reciprocal: f64,
    pub stiffness_reg: f64,
    pub total: f64,
    pub noise_scale: f64,
    pub grad_norm_deform: f64,
    pub grad_norm_material: f64,
    pub neg_floored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub checkpoint_path: Option<String>,
    /// Mean over frames of the per-point Chamfer distance between predicted
    /// and observed positions, per trajectory.
    pub recon_chamfer: Vec<f64>,
}

/// Everything random or precomputed that one loss evaluation depends on.
/// Holding it fixed makes the loss a deterministic function of the
/// parameters.
#[derive(Clone)]
pub struct StepContext {
    pub epoch: usize,
    pub stage: u32,
    pub noise_scale: f64,
    /// Scaled noise added to all positive transforms, one per negative.
    pub noise: Vec<Tensor>,
    /// Chamfer targets for untracked frames, indexed `[trajectory][frame]`.
    pub chamfer: Vec<Vec<Option<Arc<ChamferOp>>>>,
    pub features: Option<Tensor>,
    /// `[J, 7]` poses used in place of observations.
    pub random_poses: Vec<Tensor>,
}

/// Tape handles of every loss term.
pub struct LossVars {
    pub recon: Option<Var>,
    pub ortho: Var,
    pub w_pos: Option<Var>,
    pub w_neg: Option<Var>,
    pub neg_reciprocal: Option<Var>,
    pub stiffness_reg: Option<Var>,
    pub stiffness: Option<Var>,
    pub density: Option<Var>,
    pub total: Var,
    pub neg_floored: bool,
}

pub struct Trainer {
    cfg: TrainConfig,
    geom: RestGeometry,
    data: TrajectoryDataset,
    knn: KnnIndex,
    lsq: Arc<LsqGradient>,
    eigen: EigenmodeNet,
    material: MaterialNet,
    deform: ParamStore,
    mat: ParamStore,
    layout: HandleTransforms,
    points: Arc<Vec<Point>>,
    eigen_input: Tensor,
    material_query: Tensor,
    volumes: Tensor,
    targets: Vec<Vec<Option<Tensor>>>,
    w_prev: Vec<f64>,
    rng: ChaCha8Rng,
    epoch: usize,
    history: Vec<EpochMetrics>,
}

fn labeled(term: &'static str) -> impl Fn(AdError) -> TrainError {
    move |e| match e {
        AdError::NonFinite { op } => TrainError::Numeric { term: format!("{term} ({op})"), epoch: 0, last_good: None },
        other => TrainError::Ad(other),
    }
}

impl Trainer {
    pub fn new(cfg: TrainConfig, geom: RestGeometry, data: TrajectoryDataset) -> Result<Self, TrainError> {
        cfg.validate().map_err(|(field, msg)| TrainError::Config { field, msg })?;
        match cfg.mode {
            TrainMode::NoObservation => {}
            TrainMode::Observed | TrainMode::MultiTrajectory if data.is_empty() => {
                return Err(TrainError::Data("observed training needs at least one trajectory".into()))
            }
            TrainMode::Observed if data.num_trajectories() > 1 => {
                return Err(TrainError::Data("several trajectories need mode multi_trajectory".into()))
            }
            _ => {}
        }
        if cfg.mode != TrainMode::NoObservation {
            let t0 = data.num_frames();
            if data.trajectories.iter().any(|t| t.frames.len() != t0) {
                return Err(TrainError::Data("all trajectories must have the same frame count".into()));
            }
        }
        if cfg.knn >= geom.len() {
            return Err(TrainError::Config { field: "knn".into(), msg: format!("must be below the point count {}", geom.len()) });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let knn = KnnIndex::build(&geom, cfg.knn)?;
        let lsq = Arc::new(LsqGradient::new(&geom, &knn));
        let nh = cfg.num_handles;
        let eigen = EigenmodeNet::new(nh, cfg.eigen.width, cfg.eigen.layers, &geom);
        let mut deform = ParamStore::new();
        eigen.init(&mut deform, &mut rng);
        let scale = geom.bbox_diagonal() / 2.0;
        let material = MaterialNet::new(cfg.material.clone(), nh, geom.center(), scale, &knn, &mut rng);
        let mut mat = ParamStore::new();
        material.init(&mut mat, &mut rng);
        let (o, t) = match cfg.mode {
            TrainMode::NoObservation => (0, 0),
            _ => (data.num_trajectories(), data.num_frames()),
        };
        let layout = HandleTransforms::jittered(o, t, nh, cfg.transform_init_sigma, &mut rng);
        deform.insert(TRANSFORM_KEY, layout.data.clone());
        let targets = if cfg.mode == TrainMode::NoObservation {
            Vec::new()
        } else {
            data.trajectories
                .iter()
                .map(|tr| tr.frames.iter().map(|f| tr.tracked.then(|| points_to_tensor(f))).collect())
                .collect()
        };
        Ok(Trainer {
            eigen_input: eigen.input(geom.points()),
            material_query: material.query_input(geom.points()),
            volumes: Tensor::vector(geom.volumes().to_vec()),
            points: Arc::new(geom.points().to_vec()),
            w_prev: vec![0.0; geom.len()],
            cfg,
            geom,
            data,
            knn,
            lsq,
            eigen,
            material,
            deform,
            mat,
            layout,
            targets,
            rng,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &RestGeometry {
        &self.geom
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn deform_params(&self) -> &ParamStore {
        &self.deform
    }

    pub fn material_params(&self) -> &ParamStore {
        &self.mat
    }

    pub fn deform_params_mut(&mut self) -> &mut ParamStore {
        &mut self.deform
    }

    pub fn material_params_mut(&mut self) -> &mut ParamStore {
        &mut self.mat
    }

    pub fn eigen_net(&self) -> &EigenmodeNet {
        &self.eigen
    }

    pub fn material_net(&self) -> &MaterialNet {
        &self.material
    }

    pub fn knn(&self) -> &KnnIndex {
        &self.knn
    }

    pub fn lsq(&self) -> &LsqGradient {
        &self.lsq
    }

    pub fn energy_options(&self) -> EnergyOptions {
        EnergyOptions { corrected_neohookean: self.cfg.corrected_neohookean }
    }

    pub fn stage_at(&self, epoch: usize) -> u32 {
        if self.cfg.mode != TrainMode::NoObservation && epoch < self.cfg.stage1_epochs() {
            1
        } else {
            2
        }
    }

    /// Current handle transforms.
    pub fn transforms(&self) -> HandleTransforms {
        let mut h = self.layout.clone();
        h.data = self.deform.get(TRANSFORM_KEY).expect("transforms registered").clone();
        h
    }

    /// Current `[N, J]` blend weights.
    pub fn weights(&self) -> Result<Tensor, AdError> {
        self.eigen.eval(&self.deform, self.geom.points())
    }

    /// Current `[N, 3J]` spatial weight gradients.
    pub fn weight_gradients(&self, w: &Tensor) -> Tensor {
        Tensor::new(vec![w.shape()[0], 3 * w.shape()[1]], self.lsq.apply(w.data(), w.shape()[1])).expect("layout")
    }

    pub fn previous_energy(&self) -> &[f64] {
        &self.w_prev
    }

    /// Material features from current values (no gradient path).
    pub fn features(&self) -> Result<Tensor, AdError> {
        let w = self.weights()?;
        let g = self.weight_gradients(&w);
        let tr = self.transforms();
        let reference: Vec<f64> = if tr.num_frames == 0 {
            (0..self.cfg.num_handles).flat_map(|_| [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).collect()
        } else {
            tr.frame(0, tr.num_frames - 1).to_vec()
        };
        let f = assemble_features(w.data(), g.data(), &self.w_prev, &reference, &self.knn, self.eigen.scale());
        Ok(f.data)
    }

    /// Current `[N, 4]` stiffness field.
    pub fn stiffness(&self) -> Result<Tensor, AdError> {
        let f = self.features()?;
        self.material.eval(&self.mat, self.geom.points(), &f)
    }

    /// Draws the randomness for the next step, advancing the RNG.
    pub fn prepare_context(&mut self) -> Result<StepContext, AdError> {
        let epoch = self.epoch;
        let stage = self.stage_at(epoch);
        let noise_scale = noise_schedule(epoch, self.cfg.epochs, self.cfg.gamma, self.cfg.reverse_schedule);
        let mut ctx = StepContext {
            epoch,
            stage,
            noise_scale,
            noise: Vec::new(),
            chamfer: Vec::new(),
            features: None,
            random_poses: Vec::new(),
        };
        if self.cfg.mode == TrainMode::NoObservation {
            let nh = self.cfg.num_handles;
            for _ in 0..self.cfg.random_pose.samples {
                let mut p = gaussian_like(&[nh, 7], &mut self.rng);
                for (i, v) in p.data_mut().iter_mut().enumerate() {
                    *v = *v * self.cfg.random_pose.sigma + if i % 7 == 0 { 1.0 } else { 0.0 };
                }
                ctx.random_poses.push(p);
            }
        } else {
            for tr in &self.data.trajectories {
                let mut row = Vec::new();
                for f in &tr.frames {
                    if tr.tracked {
                        row.push(None);
                        continue;
                    }
                    let m = self.cfg.chamfer_samples;
                    let target: Vec<Point> = if m == 0 || f.len() <= m {
                        f.clone()
                    } else {
                        let mut idx = sample(&mut self.rng, f.len(), m).into_vec();
                        idx.sort_unstable();
                        idx.into_iter().map(|i| f[i]).collect()
                    };
                    row.push(Some(Arc::new(ChamferOp::new(target).expect("nonempty frame"))));
                }
                ctx.chamfer.push(row);
            }
            if stage == 2 {
                let shape = self.layout.data.shape().to_vec();
                for _ in 0..self.cfg.negatives {
                    let eps = gaussian_like(&shape, &mut self.rng);
                    ctx.noise.push(eps.map(|v| v * noise_scale));
                }
            }
        }
        if stage == 2 {
            ctx.features = Some(self.features()?);
        }
        Ok(ctx)
    }

    /// Domain energy `Σ V_i Ψ_i` for one `[J, 7]` transform block.
    fn frame_energy(&self, tape: &mut Tape, w: Var, g: Var, tr: Var, e: Var, vol: Var) -> Result<(Var, Var), AdError> {
        let f = tape.apply(Arc::new(DeformGradOp { points: self.points.clone() }), &[w, g, tr])?;
        let op = Arc::new(EnergyDensityOp { nu: self.cfg.nu, opts: self.energy_options() });
        let psi = tape.apply(op, &[f, e])?;
        let weighted = tape.mul(psi, vol)?;
        Ok((tape.sum(weighted)?, psi))
    }

    fn mean_of(tape: &mut Tape, vs: &[Var]) -> Result<Var, AdError> {
        let mut acc = vs[0];
        for &v in &vs[1..] {
            acc = tape.add(acc, v)?;
        }
        tape.scale(acc, 1.0 / vs.len() as f64)
    }

    /// Builds the full weighted objective for `ctx` on `tape`.
    pub fn build_loss(
        &self,
        tape: &mut Tape,
        dv: &BTreeMap<String, Var>,
        mv: &BTreeMap<String, Var>,
        ctx: &StepContext,
    ) -> Result<LossVars, TrainError> {
        let wts = &self.cfg.weights;
        let input = tape.constant(self.eigen_input.clone());
        let w = self.eigen.forward(tape, dv, input).map_err(labeled("eigenmodes"))?;
        let g = tape.apply(Arc::new(LsqGradientOp(self.lsq.clone())), &[w]).map_err(labeled("eigenmodes"))?;
        let ortho = ortho_loss(tape, w).map_err(labeled("ortho"))?;
        let ortho_w = tape.scale(ortho, wts.ortho).map_err(labeled("ortho"))?;
        let mut out = LossVars {
            recon: None,
            ortho,
            w_pos: None,
            w_neg: None,
            neg_reciprocal: None,
            stiffness_reg: None,
            stiffness: None,
            density: None,
            total: ortho_w,
            neg_floored: false,
        };
        let vol = tape.constant(self.volumes.clone());

        if self.cfg.mode == TrainMode::NoObservation {
            let e = self.stiffness_var(tape, mv, ctx)?;
            let mut ws = Vec::new();
            for p in &ctx.random_poses {
                let pv = tape.constant(p.clone());
                ws.push(self.frame_energy(tape, w, g, pv, e, vol).map_err(labeled("energy"))?.0);
            }
            let mut wp = Self::mean_of(tape, &ws).map_err(labeled("energy"))?;
            if self.cfg.random_pose.normalize_energy {
                // The stiffness here is untrained, so its scale is a constant.
                let ev = tape.value(e);
                let e_iso = ev.data().chunks(4).map(|r| r[0]).sum::<f64>() / ev.shape()[0] as f64;
                wp = tape.scale(wp, 1.0 / (e_iso * self.geom.total_volume())).map_err(labeled("energy"))?;
            }
            let scaled = tape.scale(wp, wts.energy).map_err(labeled("energy"))?;
            out.total = tape.add(out.total, scaled).map_err(labeled("energy"))?;
            out.w_pos = Some(wp);
            out.stiffness = Some(e);
            return Ok(out);
        }

        let t_all = dv[TRANSFORM_KEY];
        let mut frames = Vec::new();
        let mut recon_parts = Vec::new();
        let blend = Arc::new(BlendOp { points: self.points.clone() });
        for (o, tr) in self.data.trajectories.iter().enumerate() {
            for t in 0..tr.frames.len() {
                let tf = tape.gather_rows(t_all, self.layout.frame_rows(o, t)).map_err(labeled("recon"))?;
                frames.push((o, t, tf));
                let x = tape.apply(blend.clone(), &[w, tf]).map_err(labeled("recon"))?;
                let d = match (&self.targets[o][t], &ctx.chamfer[o][t]) {
                    (Some(target), _) => {
                        let c = tape.constant(target.clone());
                        let diff = tape.sub(x, c).map_err(labeled("recon"))?;
                        let sq = tape.square(diff).map_err(labeled("recon"))?;
                        tape.sum(sq).map_err(labeled("recon"))?
                    }
                    (None, Some(op)) => tape.apply(op.clone(), &[x]).map_err(labeled("recon"))?,
                    (None, None) => return Err(TrainError::Data(format!("no target for trajectory {o} frame {t}"))),
                };
                recon_parts.push(d);
            }
        }
        let mut recon = recon_parts[0];
        for &p in &recon_parts[1..] {
            recon = tape.add(recon, p).map_err(labeled("recon"))?;
        }
        let recon_w = tape.scale(recon, wts.recon).map_err(labeled("recon"))?;
        out.recon = Some(recon);
        out.total = tape.add(recon_w, ortho_w).map_err(labeled("recon"))?;

        if ctx.stage == 2 {
            let e = self.stiffness_var(tape, mv, ctx)?;
            let mut pos = Vec::new();
            let mut dens = Vec::new();
            for &(_, _, tf) in &frames {
                let (wf, psi) = self.frame_energy(tape, w, g, tf, e, vol).map_err(labeled("energy_pos"))?;
                pos.push(wf);
                dens.push(psi);
            }
            let w_pos = Self::mean_of(tape, &pos).map_err(labeled("energy_pos"))?;
            out.density = Some(Self::mean_of(tape, &dens).map_err(labeled("energy_pos"))?);
            let mut negs = Vec::new();
            for noise in &ctx.noise {
                let nv = tape.constant(noise.clone());
                let t_neg = tape.add(t_all, nv).map_err(labeled("energy_neg"))?;
                let mut per = Vec::new();
                for &(o, t, _) in &frames {
                    let tf = tape.gather_rows(t_neg, self.layout.frame_rows(o, t)).map_err(labeled("energy_neg"))?;
                    per.push(self.frame_energy(tape, w, g, tf, e, vol).map_err(labeled("energy_neg"))?.0);
                }
                negs.push(Self::mean_of(tape, &per).map_err(labeled("energy_neg"))?);
            }
            let w_neg = Self::mean_of(tape, &negs).map_err(labeled("energy_neg"))?;
            let recip = if tape.value(w_neg).item() < NEG_ENERGY_FLOOR {
                out.neg_floored = true;
                tape.constant(Tensor::scalar(1.0 / NEG_ENERGY_FLOOR))
            } else {
                tape.reciprocal(w_neg).map_err(labeled("energy_neg"))?
            };
            let reg = stiffness_reg(tape, e).map_err(labeled("stiffness_reg"))?;
            let contrast = tape.add(w_pos, recip).map_err(labeled("energy"))?;
            let contrast_w = tape.scale(contrast, wts.energy).map_err(labeled("energy"))?;
            let reg_w = tape.scale(reg, wts.stiffness_reg).map_err(labeled("stiffness_reg"))?;
            out.total = tape.add(out.total, contrast_w).map_err(labeled("energy"))?;
            out.total = tape.add(out.total, reg_w).map_err(labeled("stiffness_reg"))?;
            out.w_pos = Some(w_pos);
            out.w_neg = Some(w_neg);
            out.neg_reciprocal = Some(recip);
            out.stiffness_reg = Some(reg);
            out.stiffness = Some(e);
        }
        Ok(out)
    }

    fn stiffness_var(&self, tape: &mut Tape, mv: &BTreeMap<String, Var>, ctx: &StepContext) -> Result<Var, TrainError> {
        let feats = ctx.features.clone().ok_or_else(|| TrainError::Data("stage-2 context without features".into()))?;
        let q = tape.constant(self.material_query.clone());
        let f = tape.constant(feats);
        self.material.forward(tape, mv, q, f).map_err(labeled("material"))
    }

    /// Loss value for fixed `ctx` at the given parameters, without taping.
    pub fn loss_value(&self, deform: &ParamStore, mat: &ParamStore, ctx: &StepContext) -> Result<f64, TrainError> {
        let mut tape = Tape::untaped();
        let dv = deform.bind(&mut tape);
        let mv = mat.bind(&mut tape);
        let l = self.build_loss(&mut tape, &dv, &mv, ctx)?;
        Ok(tape.value(l.total).item())
    }

    /// Loss and gradients for fixed `ctx` at the current parameters.
    pub fn loss_and_grads(
        &self,
        ctx: &StepContext,
    ) -> Result<(f64, BTreeMap<String, Tensor>, BTreeMap<String, Tensor>), TrainError> {
        let mut tape = Tape::new();
        let dv = self.deform.bind(&mut tape);
        let mv = self.mat.bind(&mut tape);
        let l = self.build_loss(&mut tape, &dv, &mv, ctx)?;
        let mut grads = tape.backward(l.total)?;
        let collect = |vars: &BTreeMap<String, Var>, grads: &mut crate::ad::Gradients| {
            vars.iter().filter_map(|(k, v)| grads.take(*v).map(|g| (k.clone(), g))).collect::<BTreeMap<_, _>>()
        };
        let gd = collect(&dv, &mut grads);
        let gm = collect(&mv, &mut grads);
        Ok((tape.value(l.total).item(), gd, gm))
    }

    fn fail(&self, e: TrainError) -> TrainError {
        match e {
            TrainError::Numeric { term, .. } => {
                TrainError::Numeric { term, epoch: self.epoch, last_good: Some(Box::new(self.checkpoint())) }
            }
            other => other,
        }
    }

    /// One optimization step.
    pub fn step(&mut self) -> Result<EpochMetrics, TrainError> {
        let ctx = self.prepare_context().map_err(|e| self.fail(labeled("features")(e)))?;
        let mut tape = Tape::new();
        let dv = self.deform.bind(&mut tape);
        let mv = self.mat.bind(&mut tape);
        let l = self.build_loss(&mut tape, &dv, &mv, &ctx).map_err(|e| self.fail(e))?;
        let val = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
        let mut m = EpochMetrics {
            epoch: self.epoch,
            stage: ctx.stage,
            recon: val(l.recon),
            ortho: tape.value(l.ortho).item(),
            w_pos: val(l.w_pos),
            w_neg: val(l.w_neg),
            neg_reciprocal: val(l.neg_reciprocal),
            stiffness_reg: val(l.stiffness_reg),
            total: tape.value(l.total).item(),
            noise_scale: ctx.noise_scale,
            grad_norm_deform: 0.0,
            grad_norm_material: 0.0,
            neg_floored: l.neg_floored,
        };
        let density = l.density.map(|d| tape.value(d).data().to_vec());
        let mut grads = tape.backward(l.total).map_err(|e| self.fail(labeled("backward")(e)))?;
        let mut gd: BTreeMap<String, Tensor> = dv.iter().filter_map(|(k, v)| grads.take(*v).map(|g| (k.clone(), g))).collect();
        let mut gm: BTreeMap<String, Tensor> = mv.iter().filter_map(|(k, v)| grads.take(*v).map(|g| (k.clone(), g))).collect();
        if gd.values().chain(gm.values()).any(|g| !g.all_finite()) {
            return Err(self.fail(TrainError::Numeric { term: "gradient".into(), epoch: 0, last_good: None }));
        }
        let adam = AdamConfig { lr: self.cfg.lr, ..AdamConfig::default() };
        m.grad_norm_deform = clip_global_norm(gd.values_mut(), self.cfg.grad_clip);
        self.deform.adam_step(&gd, &adam)?;
        let train_material = ctx.stage == 2 && self.cfg.mode != TrainMode::NoObservation;
        if train_material {
            m.grad_norm_material = clip_global_norm(gm.values_mut(), self.cfg.grad_clip);
            self.mat.adam_step(&gm, &adam)?;
        }
        if let Some(d) = density {
            self.w_prev = d;
        }
        self.epoch += 1;
        self.history.push(m.clone());
        Ok(m)
    }

    /// Runs the remaining epochs, writing one JSON line per epoch to `log`.
    pub fn run(&mut self, mut log: Option<&mut dyn Write>) -> Result<TrainReport, TrainError> {
        while self.epoch < self.cfg.epochs {
            let m = self.step()?;
            if let Some(w) = log.as_mut() {
                writeln!(w, "{}", serde_json::to_string(&m).expect("metrics serialize"))
                    .map_err(|e| TrainError::Data(format!("metrics log: {e}")))?;
            }
        }
        Ok(TrainReport { epochs: self.history.clone(), checkpoint_path: None, recon_chamfer: self.recon_chamfer()? })
    }

    /// Mean per-point Chamfer between predicted and observed frames, per
    /// trajectory.
    pub fn recon_chamfer(&self) -> Result<Vec<f64>, TrainError> {
        if self.cfg.mode == TrainMode::NoObservation {
            return Ok(Vec::new());
        }
        let w = self.weights()?;
        let tr = self.transforms();
        let mut out = Vec::new();
        for (o, traj) in self.data.trajectories.iter().enumerate() {
            let mut s = 0.0;
            for (t, f) in traj.frames.iter().enumerate() {
                let x = crate::deformation::apply_deformation(w.data(), tr.frame(o, t), self.geom.points())?;
                s += chamfer_per_point(&x, f)?;
            }
            out.push(s / traj.frames.len() as f64);
        }
        Ok(out)
    }

    /// Self-contained snapshot: network parameters, transforms, rest
    /// geometry, quadrature weights and the explicit stiffness field.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
        for (k, v) in self.deform.iter().chain(self.mat.iter()) {
            if k != TRANSFORM_KEY {
                tensors.insert(k.to_string(), v.clone());
            }
        }
        tensors.insert(TRANSFORM_KEY.into(), self.transforms().to_checkpoint_tensor());
        tensors.insert("x_rest".into(), points_to_tensor(self.geom.points()));
        tensors.insert("volume".into(), Tensor::vector(self.geom.volumes().to_vec()));
        tensors.insert("mass".into(), Tensor::vector(self.geom.masses().to_vec()));
        tensors.insert("W_prev".into(), Tensor::vector(self.w_prev.clone()));
        if let Ok(e) = self.stiffness() {
            tensors.insert("E".into(), e);
        }
        let stage = if self.epoch > 0 { self.stage_at(self.epoch - 1) } else { 1 };
        let extra = BTreeMap::from([
            ("nu".to_string(), serde_json::json!(self.cfg.nu)),
            ("corrected_neohookean".to_string(), serde_json::json!(self.cfg.corrected_neohookean)),
            ("eigen_layers".to_string(), serde_json::json!(self.eigen.layers())),
            ("eigen_center".to_string(), serde_json::json!(self.eigen.center())),
            ("eigen_scale".to_string(), serde_json::json!(self.eigen.scale())),
            ("material".to_string(), serde_json::to_value(&self.cfg.material).expect("config serializes")),
            ("epochs_done".to_string(), serde_json::json!(self.epoch)),
            ("dt".to_string(), serde_json::json!(self.data.dt)),
            ("num_trajectories".to_string(), serde_json::json!(self.layout.num_trajectories)),
            ("num_frames".to_string(), serde_json::json!(self.layout.num_frames)),
        ]);
        Checkpoint {
            meta: CheckpointMeta {
                num_handles: self.cfg.num_handles,
                knn: self.cfg.knn,
                hidden_width: self.cfg.eigen.width,
                seed: self.cfg.seed,
                stage,
                extra,
            },
            tensors,
        }
    }
}

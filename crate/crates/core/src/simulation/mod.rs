//! Reduced-coordinate dynamics of a trained system: an incremental potential
//! over handle parameters minimized by damped Newton each frame.

mod config;
mod model;

pub use config::{
    BoundaryPenalty, ExternalForce, FloorConfig, InitialState, Integrator, NewtonConfig, PointSelector, SimConfig,
};
pub use model::{project_psd, IpEval, IpParts, ReducedModel, StepTerms};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::ad::ParamStore;
use crate::deformation::{EigenmodeNet, EIGEN_PREFIX};
use crate::energy::{EnergyOptions, Material};
use crate::geometry::io::Checkpoint;
use crate::geometry::{GeometryError, KnnIndex, LsqGradient, Point, RestGeometry};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config field '{field}': {msg}")]
    Config { field: String, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Handle state of one frame. `x` always equals the blend of `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub z: Vec<f64>,
    pub z_prev: Vec<f64>,
    pub x: Vec<Point>,
    pub v: Vec<Point>,
    /// Per-point acceleration; only tracked by the Newmark integrator.
    pub a: Vec<Point>,
    pub frame: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NewtonReport {
    /// Accepted Newton steps.
    pub iters: usize,
    /// Gradient norm before each accepted step, then the final one.
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// The line search found no decrease.
    pub stalled: bool,
}

impl NewtonReport {
    pub fn residual(&self) -> f64 {
        *self.residuals.last().unwrap_or(&f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub time: f64,
    pub iters: usize,
    pub residual: f64,
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub stalled: bool,
    pub energy: IpParts,
    pub kinetic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimFailure {
    pub frame: usize,
    pub term: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    /// Positions per frame, the initial state first.
    pub frames: Vec<Vec<Point>>,
    /// Handle parameters per frame.
    pub transforms: Vec<Vec<f64>>,
    pub diagnostics: Vec<FrameDiagnostics>,
    /// Set when a frame aborted; `frames` is then truncated.
    pub failure: Option<SimFailure>,
}

fn missing(key: &str) -> SimError {
    SimError::Checkpoint(format!("missing key '{key}'"))
}

impl ReducedModel {
    /// Rebuilds the frozen fields from a trained checkpoint: weights from the
    /// stored eigenmode network, their gradients from the kNN estimator and
    /// the explicit stiffness field.
    pub fn from_checkpoint(ck: &Checkpoint, corrected: Option<bool>) -> Result<Self, SimError> {
        let tensor = |k: &str| ck.tensors.get(k).ok_or_else(|| missing(k));
        let extra_f64 = |k: &str| ck.meta.extra.get(k).and_then(|v| v.as_f64()).ok_or_else(|| missing(k));
        let x_rest = tensor("x_rest")?;
        if x_rest.rank() != 2 || x_rest.shape()[1] != 3 {
            return Err(SimError::Checkpoint("x_rest must be N×3".into()));
        }
        let points = crate::geometry::tensor_to_points(x_rest);
        let n = points.len();
        let volume = tensor("volume")?.data().to_vec();
        let mass = tensor("mass")?.data().to_vec();
        let e = tensor("E")?;
        if e.shape() != [n, 4] || volume.len() != n || mass.len() != n {
            return Err(SimError::Checkpoint("per-point tensors disagree with x_rest".into()));
        }
        let nu = extra_f64("nu")?;
        let corrected = match corrected {
            Some(c) => c,
            None => ck.meta.extra.get("corrected_neohookean").and_then(|v| v.as_bool()).unwrap_or(false),
        };
        let layers = extra_f64("eigen_layers")? as usize;
        let scale = extra_f64("eigen_scale")?;
        let center: Point = ck
            .meta
            .extra
            .get("eigen_center")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| missing("eigen_center"))?;
        let nh = ck.meta.num_handles;
        let net = EigenmodeNet::with_frame(nh, ck.meta.hidden_width, layers, center, scale);
        let mut store = ParamStore::new();
        for (k, v) in ck.tensors.iter().filter(|(k, _)| k.starts_with(&format!("{EIGEN_PREFIX}."))) {
            store.insert(k.clone(), v.clone());
        }
        let w = net.eval(&store, &points).map_err(|err| SimError::Checkpoint(format!("eigenmode network: {err}")))?;
        if w.shape() != [n, nh] {
            return Err(SimError::Checkpoint("eigenmode output does not match num_handles".into()));
        }
        let geom = RestGeometry::with_weights(points.clone(), volume.clone(), mass.clone())?;
        let knn = KnnIndex::build(&geom, ck.meta.knn)?;
        let lsq = LsqGradient::new(&geom, &knn);
        let g = lsq.apply(w.data(), nh);
        let materials = e
            .data()
            .chunks(4)
            .map(|row| Material::from_stiffness(row, nu))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|err| SimError::Checkpoint(format!("stiffness field: {err}")))?;
        Ok(ReducedModel {
            points,
            volume,
            mass,
            w: w.data().to_vec(),
            g,
            materials,
            opts: EnergyOptions { corrected_neohookean: corrected },
            num_handles: nh,
        })
    }
}

/// Identity rotations and zero translations.
pub fn identity_transforms(num_handles: usize) -> Vec<f64> {
    (0..num_handles).flat_map(|_| [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).collect()
}

fn renormalize(z: &mut [f64]) {
    for h in z.chunks_mut(7) {
        let n = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2] + h[3] * h[3]).sqrt();
        if n > 0.0 {
            h[..4].iter_mut().for_each(|q| *q /= n);
        }
    }
}

/// Reduced Hessian with negative eigenvalues clamped to zero.
pub fn project_reduced_psd(h: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((h + h.transpose()) * 0.5);
    let d = eig.eigenvalues.map(|l| l.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// `P H P` with `P = I − q qᵀ` on every unit quaternion block. The potential
/// is invariant to quaternion scale, so this is its Hessian on the unit
/// sphere and the Newton step carries no radial component.
fn tangent_hessian(h: &DMatrix<f64>, z: &[f64]) -> DMatrix<f64> {
    let d = z.len();
    let mut p = DMatrix::<f64>::identity(d, d);
    for j in 0..d / 7 {
        let q = &z[7 * j..7 * j + 4];
        for a in 0..4 {
            for b in 0..4 {
                p[(7 * j + a, 7 * j + b)] -= q[a] * q[b];
            }
        }
    }
    &p * h * &p
}

/// Pseudo-inverse Newton step `−H⁺g`, dropping eigenvalues with
/// `|λ| ≤ 1e-12·max|λ|`. With `positive_only`, non-positive eigenvalues are
/// dropped as well.
fn newton_direction(h: &DMatrix<f64>, g: &[f64], positive_only: bool) -> Vec<f64> {
    let eig = SymmetricEigen::new((h + h.transpose()) * 0.5);
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |m, &l| m.max(l.abs()));
    let cut = lmax * 1e-12;
    let keep = |l: f64| if positive_only { l > cut } else { l.abs() > cut };
    let gv = DVector::from_column_slice(g);
    let proj = eig.eigenvectors.transpose() * gv;
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter().zip(eig.eigenvalues.iter()).map(|(p, &l)| if keep(l) { -p / l } else { 0.0 }),
    );
    (eig.eigenvectors * scaled).iter().copied().collect()
}

/// Minimizes the incremental potential from `z0`. A step is accepted when it
/// gives sufficient decrease of the potential and lowers the gradient norm.
/// `Err(term)` when a non-finite value appears.
pub fn newton_solve(
    model: &ReducedModel,
    z0: &[f64],
    terms: &StepTerms,
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, NewtonReport, IpParts), String> {
    let mut z = z0.to_vec();
    let mut report = NewtonReport { iters: 0, residuals: Vec::new(), converged: false, stalled: false };
    let mut cur = model.eval(&z, terms, true).ok_or("transforms")?;
    loop {
        if let Some(t) = cur.non_finite {
            return Err(t.to_string());
        }
        let r = cur.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        report.residuals.push(r);
        if r <= cfg.tol {
            report.converged = true;
            break;
        }
        if report.iters >= cfg.max_iters {
            break;
        }
        // The exact Newton step always lowers the gradient norm for small
        // steps; the projected one is a descent direction for the potential.
        let tangent = |h: &Option<DMatrix<f64>>| tangent_hessian(h.as_ref().expect("hessian requested"), &z);
        let exact = newton_direction(&tangent(&cur.hess_exact), &cur.grad, false);
        let projected = newton_direction(&tangent(&cur.hess), &cur.grad, true);
        let accepted = [exact, projected].into_iter().find_map(|dir| line_search(model, terms, cfg, &z, &dir, &cur, r));
        let Some(next) = accepted else {
            report.stalled = true;
            break;
        };
        z = next;
        report.iters += 1;
        cur = model.eval(&z, terms, true).ok_or("transforms")?;
    }
    Ok((z, report, cur.parts))
}

/// Backtracking search along `dir` for a point with sufficient decrease of
/// the potential and a smaller gradient norm than `r`.
fn line_search(
    model: &ReducedModel,
    terms: &StepTerms,
    cfg: &NewtonConfig,
    z: &[f64],
    dir: &[f64],
    cur: &IpEval,
    r: f64,
) -> Option<Vec<f64>> {
    let slope: f64 = dir.iter().zip(&cur.grad).map(|(a, b)| a * b).sum();
    if !(slope < 0.0) {
        return None;
    }
    let mut step = 1.0;
    for _ in 0..=cfg.max_backtracks {
        // Renormalized before the test: the gradient with respect to a
        // quaternion scales with 1/|q|.
        let mut trial: Vec<f64> = z.iter().zip(dir).map(|(a, b)| a + step * b).collect();
        renormalize(&mut trial);
        if let Some(e) = model.eval(&trial, terms, false) {
            let rt = e.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            if e.non_finite.is_none() && e.parts.total <= cur.parts.total + 1e-4 * step * slope && rt < r {
                return Some(trial);
            }
        }
        step *= cfg.backtrack;
    }
    None
}

struct Resolved {
    forces: Vec<(Vec<usize>, Point, usize)>,
    boundaries: Vec<(Vec<usize>, Vec<Point>, f64)>,
}

fn resolve(model: &ReducedModel, cfg: &SimConfig, x0: &[Point]) -> Result<Resolved, SimError> {
    let config_err = |field: String, msg: String| SimError::Config { field, msg };
    let mut forces = Vec::new();
    for (k, f) in cfg.forces.iter().enumerate() {
        let ix = f.points.resolve(&model.points).map_err(|m| config_err(format!("forces[{k}].points"), m))?;
        forces.push((ix, f.force, k));
    }
    let mut boundaries = Vec::new();
    for (k, b) in cfg.boundaries.iter().enumerate() {
        let ix = b.points.resolve(&model.points).map_err(|m| config_err(format!("boundaries[{k}].points"), m))?;
        let targets = match &b.targets {
            Some(t) if t.len() != ix.len() => {
                return Err(config_err(
                    format!("boundaries[{k}].targets"),
                    format!("{} targets for {} points", t.len(), ix.len()),
                ))
            }
            Some(t) => t.clone(),
            None => ix.iter().map(|&i| std::array::from_fn(|a| x0[i][a] + b.offset[a])).collect(),
        };
        boundaries.push((ix, targets, b.stiffness));
    }
    Ok(Resolved { forces, boundaries })
}

fn kinetic(model: &ReducedModel, v: &[Point]) -> f64 {
    v.iter().zip(&model.mass).map(|(v, m)| 0.5 * m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).sum()
}

/// Runs `cfg.num_frames − 1` time steps from the configured initial state.
pub fn simulate(model: &ReducedModel, cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.validate().map_err(|(field, msg)| SimError::Config { field, msg })?;
    let nh = model.num_handles;
    let z0 = match &cfg.initial.transforms {
        Some(t) if t.len() != 7 * nh => {
            return Err(SimError::Config {
                field: "initial.transforms".into(),
                msg: format!("expected {} values, got {}", 7 * nh, t.len()),
            })
        }
        Some(t) => t.clone(),
        None => identity_transforms(nh),
    };
    let z0 = if cfg.initial.relax { relax(model, z0, &cfg.newton)? } else { z0 };
    let x0 = model.positions(&z0).ok_or_else(|| SimError::Config {
        field: "initial.transforms".into(),
        msg: "zero quaternion".into(),
    })?;
    let resolved = resolve(model, cfg, &x0)?;
    let dt = cfg.dt;
    let n = model.len();
    let floor = cfg.floor.enabled.then(|| {
        let nv = cfg.floor.normal;
        let len = (nv[0] * nv[0] + nv[1] * nv[1] + nv[2] * nv[2]).sqrt();
        (cfg.floor.height, [nv[0] / len, nv[1] / len, nv[2] / len], cfg.floor.stiffness)
    });
    let point_accel = |i: usize, time: f64| -> Point {
        let mut acc = cfg.gravity;
        for (ix, f, k) in &resolved.forces {
            if cfg.forces[*k].active_at(time) && ix.binary_search(&i).is_ok() {
                for a in 0..3 {
                    acc[a] += f[a] / model.mass[i];
                }
            }
        }
        acc
    };
    let mut state = SimState {
        z: z0.clone(),
        z_prev: z0.clone(),
        v: vec![cfg.initial.velocity; n],
        a: (0..n).map(|i| point_accel(i, 0.0)).collect(),
        x: x0.clone(),
        frame: 0,
    };
    let mut result = SimResult {
        frames: vec![x0],
        transforms: vec![z0],
        diagnostics: vec![FrameDiagnostics {
            frame: 0,
            time: 0.0,
            iters: 0,
            residual: 0.0,
            residuals: Vec::new(),
            converged: true,
            stalled: false,
            energy: IpParts::default(),
            kinetic: kinetic(model, &state.v),
        }],
        failure: None,
    };
    const BETA: f64 = 0.25;
    for frame in 1..cfg.num_frames {
        let time = frame as f64 * dt;
        let (target, inertia): (Vec<Point>, f64) = match cfg.integrator {
            Integrator::ImplicitEuler => (
                state.x.iter().zip(&state.v).map(|(x, v)| std::array::from_fn(|a| x[a] + dt * v[a])).collect(),
                1.0 / (dt * dt),
            ),
            Integrator::Newmark => (
                (0..n)
                    .map(|i| {
                        std::array::from_fn(|a| {
                            state.x[i][a] + dt * state.v[i][a] + dt * dt * (0.5 - BETA) * state.a[i][a]
                        })
                    })
                    .collect(),
                1.0 / (BETA * dt * dt),
            ),
        };
        let terms = StepTerms {
            target: target.clone(),
            inertia,
            gravity: cfg.gravity,
            forces: resolved
                .forces
                .iter()
                .filter(|(_, _, k)| cfg.forces[*k].active_at(time))
                .map(|(ix, f, _)| (ix.clone(), *f))
                .collect(),
            boundaries: resolved.boundaries.clone(),
            floor,
        };
        let (z, report, parts) = match newton_solve(model, &state.z, &terms, &cfg.newton) {
            Ok(r) => r,
            Err(term) => {
                result.failure = Some(SimFailure { frame, term });
                break;
            }
        };
        let Some(x) = model.positions(&z) else {
            result.failure = Some(SimFailure { frame, term: "transforms".into() });
            break;
        };
        let damp = 1.0 - cfg.damping * dt;
        let (v, a): (Vec<Point>, Vec<Point>) = match cfg.integrator {
            Integrator::ImplicitEuler => (
                x.iter().zip(&state.x).map(|(x, p)| std::array::from_fn(|k| damp * (x[k] - p[k]) / dt)).collect(),
                state.a.clone(),
            ),
            Integrator::Newmark => {
                let a_new: Vec<Point> = (0..n)
                    .map(|i| std::array::from_fn(|k| (x[i][k] - target[i][k]) / (BETA * dt * dt)))
                    .collect();
                let v_new =
                    (0..n).map(|i| std::array::from_fn(|k| damp * (state.v[i][k] + 0.5 * dt * (state.a[i][k] + a_new[i][k])))).collect();
                (v_new, a_new)
            }
        };
        state = SimState { z_prev: std::mem::take(&mut state.z), z: z.clone(), x: x.clone(), v, a, frame };
        result.diagnostics.push(FrameDiagnostics {
            frame,
            time,
            iters: report.iters,
            residual: report.residual(),
            residuals: report.residuals,
            converged: report.converged,
            stalled: report.stalled,
            energy: parts,
            kinetic: kinetic(model, &state.v),
        });
        result.frames.push(x);
        result.transforms.push(z);
    }
    Ok(result)
}

/// Elastic-only static solve from `z0`.
fn relax(model: &ReducedModel, z0: Vec<f64>, newton: &NewtonConfig) -> Result<Vec<f64>, SimError> {
    let x0 = model.positions(&z0).ok_or_else(|| SimError::Config {
        field: "initial.transforms".into(),
        msg: "zero quaternion".into(),
    })?;
    let terms = StepTerms { target: x0, inertia: 0.0, ..Default::default() };
    let cfg = NewtonConfig { max_iters: newton.max_iters.max(100), tol: newton.tol * 1e-3, ..newton.clone() };
    newton_solve(model, &z0, &terms, &cfg)
        .map(|(z, _, _)| z)
        .map_err(|term| SimError::Config { field: "initial.relax".into(), msg: format!("non-finite {term}") })
}

/// Handle parameters of the first observed frame: the trained system's rest
/// pose. Identity when the checkpoint has no observed frames.
pub fn checkpoint_rest_transforms(ck: &Checkpoint) -> Result<Vec<f64>, SimError> {
    let nh = ck.meta.num_handles;
    let t = ck.tensors.get("T").ok_or_else(|| missing("T"))?;
    if t.rank() != 4 || t.shape()[2] != nh || t.shape()[3] != 7 {
        return Err(SimError::Checkpoint(format!("T has shape {:?}, expected [O, T, {nh}, 7]", t.shape())));
    }
    if t.numel() == 0 {
        return Ok(identity_transforms(nh));
    }
    Ok(t.data()[..7 * nh].to_vec())
}

/// Loads a checkpoint and simulates it, starting from its rest pose unless
/// the config gives initial transforms.
pub fn simulate_checkpoint(ck: &Checkpoint, cfg: &SimConfig) -> Result<SimResult, SimError> {
    let model = ReducedModel::from_checkpoint(ck, cfg.corrected_neohookean)?;
    let mut cfg = cfg.clone();
    if cfg.initial.transforms.is_none() {
        cfg.initial.transforms = Some(checkpoint_rest_transforms(ck)?);
    }
    simulate(&model, &cfg)
}

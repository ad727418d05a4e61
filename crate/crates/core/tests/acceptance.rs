//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion.
//! With `ACCEPTANCE_STRICT` set, any failure makes the process exit non-zero.
//! With `ACCEPTANCE_QUICK` set, only the training-free criteria run.

mod common;

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use unidyn::deformation::Rotation;
use unidyn::energy::oracle::{fd_stress, fd_stress_direction, random_gradient, random_material};
use unidyn::energy::{hessian, psi_aniso, psi_iso, psi_total, stress, EnergyOptions, Material, IDENTITY};
use unidyn::geometry::io::Checkpoint;
use unidyn::geometry::scene::{cube_labels, hinge_pose};
use unidyn::geometry::{chamfer_per_point, gen_scene, KnnIndex, LsqGradient, Point, SceneKind, SceneParams};
use unidyn::material::lame_from_e;
use unidyn::simulation::{
    checkpoint_rest_transforms, identity_transforms, newton_solve, simulate, simulate_checkpoint, BoundaryPenalty,
    ExternalForce, FloorConfig, InitialState, Integrator, NewtonConfig, PointSelector, ReducedModel, SimConfig, StepTerms,
};
use unidyn::training::{train, TrainConfig, TrainMode, TrainReport};

const PLAIN: EnergyOptions = EnergyOptions { corrected_neohookean: false };
const CORRECTED: EnergyOptions = EnergyOptions { corrected_neohookean: true };

type Verdict = (bool, String);

struct Trained {
    ck: Checkpoint,
    report: TrainReport,
    secs: f64,
    diag2: f64,
}

fn train_scene(kind: SceneKind, cfg: TrainConfig) -> Result<Trained, String> {
    let (geom, data) = gen_scene(kind, &SceneParams::default()).map_err(|e| e.to_string())?;
    let diag2 = geom.bbox_diagonal().powi(2);
    let start = Instant::now();
    let (ck, report) = train(cfg, geom, data).map_err(|e| e.to_string())?;
    Ok(Trained { ck, report, secs: start.elapsed().as_secs_f64(), diag2 })
}

fn setup(label: &str, f: impl FnOnce() -> Result<Trained, String>) -> Result<Trained, String> {
    eprintln!("training {label} ...");
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("training panicked".into()));
    match &out {
        Ok(t) => eprintln!("  {label}: {:.0} s, recon chamfer {:?}", t.secs, t.report.recon_chamfer),
        Err(e) => eprintln!("  {label}: {e}"),
    }
    out
}

fn trained<'a>(t: &'a Result<Trained, String>, label: &str) -> &'a Trained {
    match t {
        Ok(t) => t,
        Err(e) => panic!("{label} training failed: {e}"),
    }
}

fn dist(a: &Point, b: &Point) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

fn random_rotation(r: &mut impl Rng) -> [f64; 9] {
    let q: Vec<f64> = (0..4).map(|_| r.sample(StandardNormal)).collect();
    Rotation::from_raw(&q).expect("non-zero quaternion").r
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let s = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if s > 0.0 {
        d / s
    } else {
        d
    }
}

fn c1_rigid_zero() -> Verdict {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let rot = random_rotation(&mut r);
        let m = random_material(&mut r);
        for opts in [PLAIN, CORRECTED] {
            worst = worst.max(psi_total(&rot, &m, opts).abs()).max(psi_total(&IDENTITY, &m, opts).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (worst <= 1e-8 && secs < 1.0, format!("max |psi| {worst:.2e} over I and 100 rotations, {secs:.3} s"))
}

fn c2_goldens() -> Verdict {
    let f = [2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let iso = psi_iso(&f, 1.0, 1.0);
    let aniso = psi_aniso(&f, &[1.0, 0.0, 0.0]);
    let (mu, lambda) = lame_from_e(1.0, 0.25).expect("valid nu");
    let err = [(iso - 2.0).abs(), (aniso - 4.5).abs(), (mu - 0.4).abs(), (lambda - 0.4).abs()];
    let worst = err.iter().copied().fold(0.0, f64::max);
    (worst <= 1e-12, format!("psi_iso {iso}, psi_aniso {aniso}, lame ({mu}, {lambda}); max err {worst:.1e}"))
}

fn c3_derivatives() -> Verdict {
    let start = Instant::now();
    let (mut stress_err, mut asym, mut dir_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for seed in 0..100 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let f = random_gradient(&mut r, 0.3, 0.3);
        let m = random_material(&mut r);
        let dir: [f64; 9] = std::array::from_fn(|_| r.sample(StandardNormal));
        for opts in [PLAIN, CORRECTED] {
            stress_err = stress_err.max(rel_err(&stress(&f, &m, opts), &fd_stress(&f, &m, opts, 1e-6)));
            let h = hessian(&f, &m, opts);
            for a in 0..9 {
                for b in 0..9 {
                    asym = asym.max((h[a * 9 + b] - h[b * 9 + a]).abs());
                }
            }
            let hv: Vec<f64> = (0..9).map(|a| (0..9).map(|b| h[a * 9 + b] * dir[b]).sum()).collect();
            dir_err = dir_err.max(rel_err(&hv, &fd_stress_direction(&f, &dir, &m, opts, 1e-6)));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        stress_err <= 1e-5 && asym <= 1e-10 && dir_err <= 1e-4 && secs < 10.0,
        format!("stress rel {stress_err:.1e}, hessian asym {asym:.1e}, directional rel {dir_err:.1e}, {secs:.2} s"),
    )
}

fn c4_autodiff() -> Verdict {
    let start = Instant::now();
    let prims = common::primitive_gradcheck(50);
    let (worst_name, worst) = prims.iter().fold(("", 0.0f64), |acc, &(n, e)| if e > acc.1 { (n, e) } else { acc });
    let pipeline = common::pipeline_gradcheck();
    let (pipe_name, pipe) =
        pipeline.iter().fold((String::new(), 0.0f64), |acc, (n, e)| if *e > acc.1 { (n.clone(), *e) } else { acc });
    let secs = start.elapsed().as_secs_f64();
    (
        worst <= 1e-5 && pipe <= 1e-3 && secs < 60.0,
        format!(
            "{} primitives, worst {worst_name} {worst:.1e}; pipeline worst {pipe_name} {pipe:.1e}; {secs:.1} s",
            prims.len()
        ),
    )
}

fn c5_lsq() -> Verdict {
    let (geom, _) = gen_scene(SceneKind::TwoCubeHinge, &SceneParams::default()).expect("scene");
    let index = KnnIndex::build(&geom, 20).expect("knn");
    let op = LsqGradient::new(&geom, &index);
    let coef = [[2.0, 3.0, -1.0, 0.5], [-0.7, 0.0, 4.0, -2.0], [0.1, -5.0, 0.3, 1.0]];
    let n = geom.len();
    let values: Vec<f64> = geom
        .points()
        .iter()
        .flat_map(|p| coef.iter().map(move |c| c[0] * p[0] + c[1] * p[1] + c[2] * p[2] + c[3]))
        .collect();
    let out = op.apply(&values, coef.len());
    let interior: Vec<usize> = (0..n).filter(|&i| !op.rank_deficient()[i]).collect();
    let mut worst: f64 = 0.0;
    for &i in &interior {
        for (ch, c) in coef.iter().enumerate() {
            for k in 0..3 {
                worst = worst.max((out[(i * coef.len() + ch) * 3 + k] - c[k]).abs());
            }
        }
    }
    (
        worst <= 1e-9 && interior.len() == n,
        format!("max |err| {worst:.1e} over {}/{n} full-rank points, 3 affine channels", interior.len()),
    )
}

fn c6_recon(split: &Result<Trained, String>, hinge: &Result<Trained, String>) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, t) in [("two_cube_split", split), ("two_cube_hinge", hinge)] {
        let t = trained(t, label);
        let chamfer = t.report.recon_chamfer[0];
        let thresh = 5e-3 * t.diag2;
        let pass = chamfer <= thresh && t.secs <= 600.0 && t.report.epochs.len() <= 2000;
        ok &= pass;
        parts.push(format!("{label} chamfer {chamfer:.2e} (<= {thresh:.2e}) in {} epochs, {:.0} s", t.report.epochs.len(), t.secs));
    }
    (ok, parts.join("; "))
}

fn checkpoint_frames(ck: &Checkpoint) -> Vec<Vec<f64>> {
    let t = ck.tensor("T").expect("T");
    let nh = ck.meta.num_handles;
    t.data().chunks(7 * nh).map(|c| c.to_vec()).collect()
}

fn elastic(model: &ReducedModel, z: &[f64]) -> f64 {
    let terms = StepTerms { target: model.points.clone(), inertia: 0.0, ..Default::default() };
    model.eval(z, &terms, false).expect("finite energy").parts.elastic
}

fn c7_contrastive(hinge: &Result<Trained, String>) -> Verdict {
    let t = trained(hinge, "two_cube_hinge");
    let model = ReducedModel::from_checkpoint(&t.ck, None).expect("model");
    let frames = checkpoint_frames(&t.ck);
    let z_rest = &frames[0];
    let last = (frames.len() - 1) as f64;
    let magnitude = SceneParams::default().magnitude;
    // Fits handle transforms to a pose by minimizing the point misfit alone.
    let fitter = ReducedModel { materials: vec![Material::default(); model.len()], ..model.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut held, mut random) = (0.0, 0.0);
    let mut worst_fit: f64 = 0.0;
    for f in [4, 14, 24, 34] {
        let angle = magnitude * (f as f64 + 0.5) / last;
        let target = hinge_pose(&model.points, angle);
        let z0: Vec<f64> = frames[f].iter().zip(&frames[f + 1]).map(|(a, b)| 0.5 * (a + b)).collect();
        let terms = StepTerms { target: target.clone(), inertia: 1.0, ..Default::default() };
        let cfg = NewtonConfig { max_iters: 50, tol: 1e-12, ..Default::default() };
        let (z, _, _) = newton_solve(&fitter, &z0, &terms, &cfg).expect("fit");
        let x = fitter.positions(&z).expect("positions");
        worst_fit = worst_fit.max(x.iter().zip(&target).map(|(a, b)| dist(a, b)).fold(0.0, f64::max));
        held += elastic(&model, &z);
        let mag = z.iter().zip(z_rest).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let samples = 16;
        for _ in 0..samples {
            let eps: Vec<f64> = (0..z.len()).map(|_| rng.sample(StandardNormal)).collect();
            let norm = eps.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
            let zr: Vec<f64> = z_rest.iter().zip(&eps).map(|(a, e)| a + e * mag / norm).collect();
            random += elastic(&model, &zr) / samples as f64;
        }
    }
    let ratio = held / random;
    (
        ratio < 0.1,
        format!("W(held-out hinge) / W(random, same magnitude) = {ratio:.4} over 4 poses (max fit error {worst_fit:.1e})"),
    )
}

/// Far-corner static displacement of the top cube under an equal per-point
/// force along `dir`, bottom cube pinned, relative to the zero-force state.
fn static_response(model: &ReducedModel, z0: &[f64], far: usize, force: [f64; 3]) -> Point {
    let cfg = SimConfig {
        dt: 2.0,
        num_frames: 15,
        gravity: [0.0; 3],
        damping: 0.0,
        forces: vec![ExternalForce { points: PointSelector::Box { min: [0.0; 3], max: [1.0; 3] }, force, start: None, end: None }],
        boundaries: vec![BoundaryPenalty {
            points: PointSelector::Box { min: [-1.0; 3], max: [0.0; 3] },
            stiffness: 1e3,
            offset: [0.0; 3],
            targets: None,
        }],
        initial: InitialState { transforms: Some(z0.to_vec()), ..Default::default() },
        ..Default::default()
    };
    let out = simulate(model, &cfg).expect("simulation");
    assert!(out.failure.is_none(), "force simulation aborted");
    out.frames.last().expect("frames")[far]
}

fn c8_anisotropy(hinge: &Result<Trained, String>) -> Verdict {
    let t = trained(hinge, "two_cube_hinge");
    let e = t.ck.tensor("E").expect("E");
    let model = ReducedModel::from_checkpoint(&t.ck, None).expect("model");
    // Points near the shared corner, which the hinge axis passes through.
    let joint: Vec<usize> = (0..model.len()).filter(|&i| dist(&model.points[i], &[0.0; 3]) < 0.35).collect();
    let mut mean = [0.0; 4];
    for &i in &joint {
        for c in 0..4 {
            mean[c] += e.data()[4 * i + c] / joint.len() as f64;
        }
    }
    let channel_ratio = mean[3] / mean[1].max(mean[2]);

    let z0 = checkpoint_rest_transforms(&t.ck).expect("rest transforms");
    let far = (0..model.len())
        .max_by(|&a, &b| model.points[a].iter().sum::<f64>().total_cmp(&model.points[b].iter().sum::<f64>()))
        .expect("points");
    let base = static_response(&model, &z0, far, [0.0; 3]);
    let f = 1e-3;
    let disp = |force| dist(&static_response(&model, &z0, far, force), &base);
    let dz = disp([0.0, 0.0, f]);
    let (dx, dy) = (disp([f, 0.0, 0.0]), disp([0.0, f, 0.0]));
    let response_ratio = dz / (0.5 * (dx + dy));
    (
        channel_ratio >= 3.0 && response_ratio < 0.1,
        format!(
            "joint E_z/max(E_x,E_y) = {channel_ratio:.2} over {} points; stiff/compliant displacement {dz:.2e}/{:.2e} = {response_ratio:.3}",
            joint.len(),
            0.5 * (dx + dy)
        ),
    )
}

fn c9_discontinuum(split: &Result<Trained, String>) -> Verdict {
    let t = trained(split, "two_cube_split");
    let model = ReducedModel::from_checkpoint(&t.ck, None).expect("model");
    let nh = model.num_handles;
    let labels = cube_labels(&model.points);
    let count = |c: usize| labels.iter().filter(|&&l| l == c).count() as f64;
    // Each handle belongs to the cube where its mean weight is larger.
    let owner: Vec<usize> = (0..nh)
        .map(|j| {
            let mean = |c: usize| (0..model.len()).filter(|&i| labels[i] == c).map(|i| model.w[i * nh + j]).sum::<f64>() / count(c);
            usize::from(mean(1) > mean(0))
        })
        .collect();
    let separated = (0..model.len())
        .filter(|&i| {
            let own: f64 = (0..nh).filter(|&j| owner[j] == labels[i]).map(|j| model.w[i * nh + j]).sum();
            let other: f64 = (0..nh).filter(|&j| owner[j] != labels[i]).map(|j| model.w[i * nh + j].abs()).sum();
            own >= 0.9 && other <= 0.1
        })
        .count() as f64
        / model.len() as f64;

    // Hold the top cube and let the bottom one fall.
    let cfg = SimConfig {
        num_frames: 30,
        boundaries: vec![BoundaryPenalty {
            points: PointSelector::Box { min: [0.0; 3], max: [1.0; 3] },
            stiffness: 1e4,
            offset: [0.0; 3],
            targets: None,
        }],
        ..Default::default()
    };
    let out = simulate_checkpoint(&t.ck, &cfg).expect("simulation");
    let gaps: Vec<f64> = out
        .frames
        .iter()
        .map(|f| {
            let (top, bottom): (Vec<Point>, Vec<Point>) = {
                let top = f.iter().zip(&labels).filter(|(_, &l)| l == 1).map(|(p, _)| *p).collect();
                let bottom = f.iter().zip(&labels).filter(|(_, &l)| l == 0).map(|(p, _)| *p).collect();
                (top, bottom)
            };
            chamfer_per_point(&top, &bottom).expect("chamfer")
        })
        .collect();
    let monotone = gaps.windows(2).all(|w| w[1] > w[0]);
    (
        separated >= 0.95 && monotone && out.failure.is_none(),
        format!(
            "{:.1}% of points separated (>=0.9 own / <=0.1 other); inter-cube chamfer {:.3e} -> {:.3e}, monotone {monotone}",
            100.0 * separated,
            gaps[0],
            gaps[gaps.len() - 1]
        ),
    )
}

fn c10_physics(shipped: &[(&str, &Result<Trained, String>)]) -> Verdict {
    // Near-rigid free fall under the Newmark integrator.
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let pts = common::random_points(200, &mut r);
    let mats: Vec<Material> = (0..200)
        .map(|_| Material::from_stiffness(&[r.gen_range(1e3..2e3), 0.0, 0.0, r.gen_range(0.0..1e3)], 0.3).expect("material"))
        .collect();
    let model = common::blob_model(pts, 4, mats, true);
    let dt = 0.02;
    let cfg = SimConfig { dt, num_frames: 31, integrator: Integrator::Newmark, ..Default::default() };
    let out = simulate(&model, &cfg).expect("free fall");
    let centroid = |f: &[Point]| f.iter().map(|p| p[2]).sum::<f64>() / f.len() as f64;
    let z0 = centroid(&out.frames[0]);
    let mut fall_err: f64 = 0.0;
    for (n, f) in out.frames.iter().enumerate().skip(1) {
        let t = n as f64 * dt;
        let expect = -0.5 * 9.81 * t * t;
        fall_err = fall_err.max(((centroid(f) - z0) - expect).abs() / expect.abs());
    }

    // Accepted Newton iterations reduce the residual on every shipped scene.
    let mut residual_ok = true;
    let mut scenes = Vec::new();
    for (label, t) in shipped {
        let t = trained(t, label);
        let x0 = ReducedModel::from_checkpoint(&t.ck, None).expect("model").points;
        let floor = x0.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min) - 0.05;
        let cfg = SimConfig {
            num_frames: 20,
            floor: FloorConfig { enabled: true, height: floor, ..Default::default() },
            ..Default::default()
        };
        let out = simulate_checkpoint(&t.ck, &cfg).expect("simulation");
        let ok = out.failure.is_none() && out.diagnostics.iter().all(|d| d.residuals.windows(2).all(|w| w[1] < w[0]));
        residual_ok &= ok;
        scenes.push(format!("{label} {}", if ok { "ok" } else { "FAIL" }));
    }

    // A quadratic IP: one rigid handle with no elastic energy.
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut pts = common::random_points(50, &mut r);
    let c: Point = std::array::from_fn(|k| pts.iter().map(|p| p[k]).sum::<f64>() / 50.0);
    pts.iter_mut().for_each(|p| (0..3).for_each(|k| p[k] -= c[k]));
    let rigid = common::blob_model(pts, 1, vec![Material::default(); 50], false);
    let terms = StepTerms {
        target: rigid.points.iter().map(|p| [p[0] + 0.01, p[1], p[2] - 0.02]).collect(),
        inertia: 1.0 / (0.04 * 0.04),
        gravity: [0.0, 0.0, -9.81],
        ..Default::default()
    };
    let (_, rep, _) = newton_solve(&rigid, &identity_transforms(1), &terms, &NewtonConfig::default()).expect("solve");
    let quad_ok = rep.converged && rep.iters == 1;
    (
        fall_err <= 0.01 && residual_ok && quad_ok,
        format!(
            "free fall max rel err {fall_err:.1e} over 30 frames; residual monotone [{}]; quadratic IP {} iteration(s)",
            scenes.join(", "),
            rep.iters
        ),
    )
}

fn c11_handles(ropes: &[(usize, Result<Trained, String>)]) -> Verdict {
    let errs: Vec<(usize, f64)> = ropes.iter().map(|(j, t)| (*j, trained(t, "rope_fixed_end").report.recon_chamfer[0])).collect();
    let monotone = errs.windows(2).all(|w| w[0].1 > w[1].1);
    let text: Vec<String> = errs.iter().map(|(j, e)| format!("J={j}: {e:.3e}")).collect();
    (monotone, format!("rope recon chamfer {}", text.join(" > ")))
}

fn c12_determinism() -> Verdict {
    let run = || {
        let (geom, data) =
            gen_scene(SceneKind::TwoCubeSplit, &SceneParams { num_points: 300, num_frames: 8, ..Default::default() }).expect("scene");
        let cfg = TrainConfig { num_handles: 3, epochs: 30, seed: 11, ..Default::default() };
        let (ck, report) = train(cfg, geom, data).expect("train");
        let sim = simulate_checkpoint(&ck, &SimConfig { num_frames: 10, ..Default::default() }).expect("simulate");
        let metrics: Vec<String> = report.epochs.iter().map(|m| serde_json::to_string(m).expect("metrics")).collect();
        let frames: Vec<u64> = sim.frames.iter().flatten().flatten().map(|v| v.to_bits()).collect();
        (ck.to_json(), metrics, frames)
    };
    let (a, b) = (run(), run());
    let (ck, metrics, traj) = (a.0 == b.0, a.1 == b.1, a.2 == b.2);
    (ck && metrics && traj, format!("checkpoint identical {ck}, metrics identical {metrics}, trajectory identical {traj}"))
}

fn main() {
    let quick = std::env::var("ACCEPTANCE_QUICK").is_ok();
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!("criterion {id:>2} {} {name}: {}", if v.0 { "PASS" } else { "FAIL" }, v.1);
        std::io::stdout().flush().ok();
        results.push((id, name, v));
    };

    record(1, "energy rigid-motion zero", &mut c1_rigid_zero);
    record(2, "hand-value goldens", &mut c2_goldens);
    record(3, "derivative oracles", &mut c3_derivatives);
    record(4, "autodiff gradient checks", &mut c4_autodiff);
    record(5, "lsq gradient exactness", &mut c5_lsq);
    if quick {
        println!("ACCEPTANCE_QUICK set: training-based criteria 6-12 skipped");
        return;
    }

    let split = setup("two_cube_split", || train_scene(SceneKind::TwoCubeSplit, TrainConfig::default()));
    let hinge = setup("two_cube_hinge", || train_scene(SceneKind::TwoCubeHinge, TrainConfig::default()));
    let ropes: Vec<(usize, Result<Trained, String>)> = [2, 5, 8]
        .into_iter()
        .map(|j| {
            let cfg = TrainConfig { num_handles: j, ..Default::default() };
            (j, setup(&format!("rope_fixed_end J={j}"), || train_scene(SceneKind::RopeFixedEnd, cfg)))
        })
        .collect();
    let short = TrainConfig { epochs: 200, ..Default::default() };
    let drop = setup("multibody_drop", || train_scene(SceneKind::MultibodyDrop, short.clone()));
    let soft = setup("soft_none", || {
        train_scene(SceneKind::SoftNone, TrainConfig { mode: TrainMode::NoObservation, ..short.clone() })
    });

    record(6, "reconstruction at desk scale", &mut || c6_recon(&split, &hinge));
    record(7, "contrastive separation", &mut || c7_contrastive(&hinge));
    record(8, "anisotropy emergence", &mut || c8_anisotropy(&hinge));
    record(9, "discontinuum emergence", &mut || c9_discontinuum(&split));
    let shipped = [
        ("two_cube_hinge", &hinge),
        ("two_cube_split", &split),
        ("rope_fixed_end", &ropes[2].1),
        ("multibody_drop", &drop),
        ("soft_none", &soft),
    ];
    record(10, "simulation physics", &mut || c10_physics(&shipped));
    record(11, "handle ablation trend", &mut || c11_handles(&ropes));
    record(12, "determinism", &mut c12_determinism);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2 .0).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        if std::env::var("ACCEPTANCE_STRICT").is_ok() {
            std::process::exit(1);
        }
    }
}

mod common;

use common::{blob_model, random_points, rng};
use rand::Rng;
use unidyn::energy::Material;
use unidyn::geometry::Point;
use unidyn::simulation::{
    identity_transforms, newton_solve, project_psd, project_reduced_psd, simulate, BoundaryPenalty, ExternalForce, FloorConfig, Integrator,
    NewtonConfig, PointSelector, ReducedModel, SimConfig, StepTerms,
};

fn random_materials(n: usize, r: &mut impl Rng) -> Vec<Material> {
    (0..n)
        .map(|_| Material::from_stiffness(&[r.gen_range(1.0..5.0), r.gen_range(0.0..3.0), r.gen_range(0.0..3.0), r.gen_range(0.0..3.0)], 0.3).unwrap())
        .collect()
}

fn perturbed(nh: usize, sigma: f64, r: &mut impl Rng) -> Vec<f64> {
    identity_transforms(nh).iter().map(|v| v + r.gen_range(-sigma..sigma)).collect()
}

fn full_terms(model: &ReducedModel, r: &mut impl Rng) -> StepTerms {
    let n = model.len();
    StepTerms {
        target: model.points.iter().map(|p| std::array::from_fn(|k| p[k] + r.gen_range(-0.05..0.05))).collect(),
        inertia: 1.0 / (0.04 * 0.04),
        gravity: [0.0, 0.0, -9.81],
        forces: vec![((0..n / 3).collect(), [0.3, -0.1, 0.2])],
        boundaries: vec![((n / 2..n).collect(), model.points[n / 2..].iter().map(|p| [p[0], p[1] + 0.1, p[2]]).collect(), 50.0)],
        floor: Some((-0.5, [0.0, 0.0, 1.0], 1e3)),
    }
}

#[test]
fn reduced_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let pts = random_points(60, &mut r);
        let mats = random_materials(60, &mut r);
        let model = blob_model(pts, 3, mats, seed % 2 == 0);
        let terms = full_terms(&model, &mut r);
        let z = perturbed(3, 0.15, &mut r);
        let e = model.eval(&z, &terms, false).unwrap();
        let h = 1e-6;
        let mut num = vec![0.0; z.len()];
        for k in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let fp = model.eval(&zp, &terms, false).unwrap().parts.total;
            let fm = model.eval(&zm, &terms, false).unwrap().parts.total;
            num[k] = (fp - fm) / (2.0 * h);
        }
        let diff = e.grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = num.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(diff / scale <= 1e-4, "seed {seed}: rel err {:e}", diff / scale);
    }
}

/// Near rest the per-point clamp is inactive and the assembled Hessian is
/// exact, curvature of the rotation parameterization included.
#[test]
fn hessian_matches_finite_differences_near_rest() {
    for seed in 0..5 {
        let mut r = rng(seed + 40);
        let pts = random_points(50, &mut r);
        let mats = random_materials(50, &mut r);
        let model = blob_model(pts, 2, mats, true);
        let mut terms = full_terms(&model, &mut r);
        terms.floor = None;
        let z = perturbed(2, 0.02, &mut r);
        let h = model.eval(&z, &terms, true).unwrap().hess.unwrap();
        let step = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += step;
            zm[k] -= step;
            let gp = model.eval(&zp, &terms, false).unwrap().grad;
            let gm = model.eval(&zm, &terms, false).unwrap().grad;
            for l in 0..z.len() {
                let fd = (gp[l] - gm[l]) / (2.0 * step);
                worst = worst.max((fd - h[(l, k)]).abs());
            }
        }
        assert!(worst <= 1e-4 * h.norm(), "seed {seed}: {worst:e} vs |H| {:e}", h.norm());
    }
}

#[test]
fn projected_hessians_are_psd() {
    let mut r = rng(7);
    let pts = random_points(40, &mut r);
    let mats = random_materials(40, &mut r);
    let model = blob_model(pts, 3, mats, false);
    let terms = full_terms(&model, &mut r);
    let z = perturbed(3, 0.6, &mut r);
    let h = project_reduced_psd(&model.eval(&z, &terms, true).unwrap().hess.unwrap());
    let min = h.clone().symmetric_eigen().eigenvalues.min();
    assert!(min >= -1e-10 * h.norm(), "min eigenvalue {min}");
    let m = [[2.0, 0.0], [0.0, -3.0]];
    let mut block = [0.0; 81];
    block[0] = m[0][0];
    block[10] = m[1][1];
    let p = project_psd(&block);
    assert!((p[0] - 2.0).abs() < 1e-12 && p[10].abs() < 1e-12);
}

#[test]
fn quadratic_potential_converges_in_one_step() {
    let mut r = rng(3);
    let mut pts = random_points(50, &mut r);
    let c: Point = std::array::from_fn(|k| pts.iter().map(|p| p[k]).sum::<f64>() / 50.0);
    pts.iter_mut().for_each(|p| (0..3).for_each(|k| p[k] -= c[k]));
    let model = blob_model(pts, 1, vec![Material::default(); 50], false);
    let terms = StepTerms {
        target: model.points.iter().map(|p| [p[0] + 0.01, p[1], p[2] - 0.02]).collect(),
        inertia: 1.0 / (0.04 * 0.04),
        gravity: [0.0, 0.0, -9.81],
        ..Default::default()
    };
    let (z, rep, _) = newton_solve(&model, &identity_transforms(1), &terms, &NewtonConfig::default()).unwrap();
    assert!(rep.converged);
    assert_eq!(rep.iters, 1);
    let dz = -0.02 - 9.81 * 0.04 * 0.04;
    assert!((z[4] - 0.01).abs() < 1e-12 && (z[6] - dz).abs() < 1e-12, "{z:?}");
}

#[test]
fn rest_state_is_an_equilibrium() {
    let mut r = rng(11);
    let pts = random_points(80, &mut r);
    let mats = random_materials(80, &mut r);
    let model = blob_model(pts.clone(), 3, mats, true);
    let cfg = SimConfig { gravity: [0.0; 3], num_frames: 20, ..Default::default() };
    let out = simulate(&model, &cfg).unwrap();
    assert!(out.failure.is_none());
    assert_eq!(out.frames.len(), 20);
    for f in &out.frames {
        for (a, b) in f.iter().zip(&pts) {
            assert!((0..3).all(|k| (a[k] - b[k]).abs() < 1e-12));
        }
    }
}

#[test]
fn free_fall_matches_closed_forms() {
    let mut r = rng(5);
    let pts = random_points(100, &mut r);
    let model = blob_model(pts, 1, random_materials(100, &mut r), true);
    let g = -9.81;
    let dt = 0.02;
    let centroid_z = |f: &[Point]| f.iter().map(|p| p[2]).sum::<f64>() / f.len() as f64;
    let z0 = centroid_z(&model.points);

    let newmark = SimConfig { dt, num_frames: 31, integrator: Integrator::Newmark, ..Default::default() };
    let out = simulate(&model, &newmark).unwrap();
    for (n, f) in out.frames.iter().enumerate().skip(1) {
        let t = n as f64 * dt;
        let expect = 0.5 * g * t * t;
        assert!(((centroid_z(f) - z0) - expect).abs() <= 1e-9 * expect.abs(), "frame {n}");
    }

    // Backward Euler lags by one step: x_n = g·dt²·n(n+1)/2.
    let euler = SimConfig { dt, num_frames: 31, ..Default::default() };
    let out = simulate(&model, &euler).unwrap();
    for (n, f) in out.frames.iter().enumerate().skip(1) {
        let expect = g * dt * dt * (n * (n + 1)) as f64 / 2.0;
        assert!(((centroid_z(f) - z0) - expect).abs() <= 1e-9 * expect.abs(), "frame {n}");
    }
}

#[test]
fn handle_relabeling_permutes_nothing_else() {
    let mut r = rng(21);
    let pts = random_points(60, &mut r);
    let mats = random_materials(60, &mut r);
    let model = blob_model(pts, 3, mats, true);
    let z0 = perturbed(3, 0.05, &mut r);
    let perm = [2usize, 0, 1];
    let mut permuted = model.clone();
    let n = model.len();
    for i in 0..n {
        for (new, &old) in perm.iter().enumerate() {
            permuted.w[i * 3 + new] = model.w[i * 3 + old];
            for k in 0..3 {
                permuted.g[i * 9 + 3 * new + k] = model.g[i * 9 + 3 * old + k];
            }
        }
    }
    let z0p: Vec<f64> = perm.iter().flat_map(|&old| z0[7 * old..7 * old + 7].to_vec()).collect();
    let cfg = |z: Vec<f64>| SimConfig {
        num_frames: 8,
        initial: unidyn::simulation::InitialState { transforms: Some(z), ..Default::default() },
        ..Default::default()
    };
    let a = simulate(&model, &cfg(z0)).unwrap();
    let b = simulate(&permuted, &cfg(z0p)).unwrap();
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        for (p, q) in fa.iter().zip(fb) {
            assert!((0..3).all(|k| (p[k] - q[k]).abs() < 1e-8), "{p:?} vs {q:?}");
        }
    }
}

#[test]
fn single_handle_energy_never_increases() {
    let mut r = rng(8);
    let pts = random_points(60, &mut r);
    let model = blob_model(pts, 1, random_materials(60, &mut r), true);
    let cfg = SimConfig {
        gravity: [0.0; 3],
        num_frames: 30,
        initial: unidyn::simulation::InitialState {
            transforms: Some(vec![0.9, 0.3, -0.2, 0.1, 0.0, 0.0, 0.0]),
            velocity: [0.4, -0.2, 0.1],
            ..Default::default()
        },
        ..Default::default()
    };
    let out = simulate(&model, &cfg).unwrap();
    let totals: Vec<f64> = out.diagnostics.iter().skip(1).map(|d| d.kinetic + d.energy.elastic).collect();
    for w in totals.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-8), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn floor_penetration_is_bounded() {
    let mut r = rng(13);
    let pts: Vec<Point> = random_points(64, &mut r).iter().map(|p| [0.2 * p[0], 0.2 * p[1], 0.2 * p[2] + 1.0]).collect();
    let model = blob_model(pts, 1, random_materials(64, &mut r), true);
    let kappa = 500.0;
    let cfg = SimConfig {
        dt: 0.01,
        num_frames: 120,
        floor: FloorConfig { enabled: true, height: 0.0, normal: [0.0, 0.0, 1.0], stiffness: kappa },
        ..Default::default()
    };
    let out = simulate(&model, &cfg).unwrap();
    // Released potential bounds the stored penalty energy: with the
    // centroid never below the deepest point, ½κd² ≤ M·g·(c₀ + d).
    let total_mass: f64 = model.mass.iter().sum();
    let c0 = model.points.iter().map(|p| p[2]).sum::<f64>() / model.len() as f64;
    let worst = out.frames.iter().flatten().map(|p| -p[2]).fold(0.0, f64::max);
    assert!(worst > 0.0, "body should reach the floor");
    let a = 2.0 * total_mass * 9.81 / kappa;
    let bound = a / 2.0 + (a * a / 4.0 + a * c0).sqrt();
    assert!(worst <= bound, "penetration {worst} exceeds {bound}");
}

#[test]
fn external_force_and_tether() {
    let mut r = rng(17);
    let pts = random_points(60, &mut r);
    let model = blob_model(pts, 3, random_materials(60, &mut r), true);
    let cfg = SimConfig {
        gravity: [0.0; 3],
        num_frames: 10,
        forces: vec![ExternalForce { points: PointSelector::All, force: [0.01, 0.0, 0.0], start: None, end: Some(0.1) }],
        boundaries: vec![BoundaryPenalty {
            points: PointSelector::Box { min: [-1.0, -1.0, -1.0], max: [0.0, 1.0, 1.0] },
            stiffness: 0.0,
            offset: [0.0; 3],
            targets: None,
        }],
        ..Default::default()
    };
    let out = simulate(&model, &cfg).unwrap();
    let cx = |f: &[Point]| f.iter().map(|p| p[0]).sum::<f64>() / f.len() as f64;
    assert!(cx(&out.frames[9]) > cx(&out.frames[0]));
    let bad = SimConfig { dt: -1.0, ..Default::default() };
    assert!(simulate(&model, &bad).is_err());
}

#[test]
fn relaxed_start_removes_prestress_drift() {
    let mut r = rng(21);
    let pts = random_points(80, &mut r);
    let mut model = blob_model(pts, 3, random_materials(80, &mut r), true);
    // Weights no longer sum to one, so identity transforms are pre-stressed.
    model.w.iter_mut().for_each(|w| *w *= 0.8);
    model.g.iter_mut().for_each(|g| *g *= 0.8);
    let cfg = |relax| SimConfig {
        gravity: [0.0; 3],
        num_frames: 10,
        initial: unidyn::simulation::InitialState { relax, ..Default::default() },
        ..Default::default()
    };
    let moved = simulate(&model, &cfg(false)).unwrap();
    let drift = |frames: &[Vec<Point>]| {
        frames.iter().flat_map(|f| f.iter().zip(&frames[0]).map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max))).fold(0.0, f64::max)
    };
    assert!(drift(&moved.frames) > 1e-3);
    let still = simulate(&model, &cfg(true)).unwrap();
    assert!(drift(&still.frames) < 1e-9, "{}", drift(&still.frames));
}

#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unidyn::ad::nn::Mlp;
use unidyn::ad::{AdError, ParamStore, Tape, Tensor, Var};
use unidyn::energy::{EnergyOptions, Material};
use unidyn::geometry::{gen_scene, Point, SceneKind, SceneParams};
use unidyn::material::MaterialNetConfig;
use unidyn::simulation::ReducedModel;
use unidyn::training::{EigenConfig, TrainConfig, Trainer};

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Norm-wise relative error between analytic and central-difference
/// gradients of `f` with respect to every input, maximized over inputs.
/// `f` must build a scalar on the tape from the given leaves.
pub fn gradcheck<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AdError>,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut t = Tape::untaped();
        let vs: Vec<Var> = vals.iter().map(|v| t.leaf(v.clone())).collect();
        let y = f(&mut t, &vs).expect("forward");
        t.value(y).item()
    };
    let mut t = Tape::new();
    let vs: Vec<Var> = inputs.iter().map(|v| t.leaf(v.clone())).collect();
    let y = f(&mut t, &vs).expect("forward");
    let grads = t.backward(y).expect("backward");
    let mut worst: f64 = 0.0;
    for (k, inp) in inputs.iter().enumerate() {
        let analytic = grads.get(vs[k]).cloned().unwrap_or_else(|| Tensor::zeros(inp.shape()));
        let mut numeric = vec![0.0; inp.numel()];
        for i in 0..inp.numel() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            minus[k].data_mut()[i] -= FD_STEP;
            numeric[i] = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic.data().iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.norm_sq().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
        let rel = if scale > 0.0 { diff / scale } else { diff };
        worst = worst.max(rel);
    }
    worst
}

/// Contracts an arbitrary-shape output with fixed random weights so the
/// check covers the full Jacobian.
pub fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Result<Var, AdError> {
    let shape = t.shape(y).to_vec();
    let w = random_tensor(&shape, -1.0, 1.0, &mut rng(seed ^ 0x5eed));
    let wv = t.constant(w);
    let p = t.mul(y, wv)?;
    t.sum(p)
}

pub fn random_points(n: usize, r: &mut impl Rng) -> Vec<Point> {
    (0..n).map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect()
}

/// Smooth partition-of-unity weights with matching analytic gradients.
pub fn blob_model(points: Vec<Point>, nh: usize, materials: Vec<Material>, corrected: bool) -> ReducedModel {
    let n = points.len();
    let centers: Vec<Point> = (0..nh).map(|j| {
        let a = j as f64 * 2.0 * std::f64::consts::PI / nh as f64;
        [0.8 * a.cos(), 0.8 * a.sin(), 0.2 * j as f64 - 0.2]
    }).collect();
    let mut w = vec![0.0; n * nh];
    let mut g = vec![0.0; n * 3 * nh];
    for (i, p) in points.iter().enumerate() {
        let raw: Vec<f64> = centers.iter().map(|c| (-(0..3).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>()).exp()).collect();
        let s: f64 = raw.iter().sum();
        let draw: Vec<Point> = centers
            .iter()
            .zip(&raw)
            .map(|(c, r)| std::array::from_fn(|k| -2.0 * (p[k] - c[k]) * r))
            .collect();
        let ds: Point = std::array::from_fn(|k| draw.iter().map(|d| d[k]).sum());
        for j in 0..nh {
            w[i * nh + j] = raw[j] / s;
            for k in 0..3 {
                g[i * 3 * nh + 3 * j + k] = draw[j][k] / s - raw[j] * ds[k] / (s * s);
            }
        }
    }
    ReducedModel {
        volume: vec![1.0 / n as f64; n],
        mass: vec![2.0 / n as f64; n],
        points,
        w,
        g,
        materials,
        opts: EnergyOptions { corrected_neohookean: corrected },
        num_handles: nh,
    }
}


type Unary = fn(&mut Tape, Var) -> Result<Var, AdError>;
type Binary = fn(&mut Tape, Var, Var) -> Result<Var, AdError>;

fn unary_ops() -> Vec<(&'static str, f64, f64, Unary)> {
    vec![
        ("square", -2.0, 2.0, |t, x| t.square(x)),
        ("sqrt", 0.5, 3.0, |t, x| t.sqrt(x)),
        ("exp", -2.0, 2.0, |t, x| t.exp(x)),
        ("log", 0.5, 3.0, |t, x| t.log(x)),
        ("reciprocal", 0.5, 3.0, |t, x| t.reciprocal(x)),
        ("elu", -2.0, 2.0, |t, x| t.elu(x)),
        ("softplus", -4.0, 4.0, |t, x| t.softplus(x)),
        ("transpose", -1.0, 1.0, |t, x| t.transpose(x)),
        ("sum", -1.0, 1.0, |t, x| {
            let s = t.sum(x)?;
            t.square(s)
        }),
        ("mean", -1.0, 1.0, |t, x| {
            let s = t.mean(x)?;
            t.square(s)
        }),
        ("sum_last", -1.0, 1.0, |t, x| t.sum_last(x)),
        ("scale", -1.0, 1.0, |t, x| t.scale(x, -2.5)),
        ("offset", -1.0, 1.0, |t, x| {
            let o = t.offset(x, 0.7)?;
            t.square(o)
        }),
        ("slice", -1.0, 1.0, |t, x| t.slice(x, 1, 3)),
        ("softmax", -2.0, 2.0, |t, x| t.softmax(x)),
        ("reshape", -1.0, 1.0, |t, x| {
            let r = t.reshape(x, &[2, 6])?;
            t.square(r)
        }),
        ("gather_rows", -1.0, 1.0, |t, x| t.gather_rows(x, Arc::new(vec![2, 0, 2]))),
    ]
}

fn binary_ops() -> Vec<(&'static str, Binary)> {
    vec![("add", |t, a, b| t.add(a, b)), ("sub", |t, a, b| t.sub(a, b)), ("mul", |t, a, b| t.mul(a, b)), ("div", |t, a, b| t.div(a, b))]
}

/// Worst finite-difference relative error of every tape primitive (and an
/// MLP composite) over `seeds` random inputs.
pub fn primitive_gradcheck(seeds: u64) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    for (name, lo, hi, op) in unary_ops() {
        let mut worst: f64 = 0.0;
        for seed in 0..seeds {
            let mut r = rng(seed);
            let mut x = random_tensor(&[3, 4], lo, hi, &mut r);
            // Keep clear of the ELU kink.
            for v in x.data_mut() {
                if v.abs() < 1e-3 {
                    *v = 1e-2;
                }
            }
            worst = worst.max(gradcheck(&[x], |t, v| {
                let y = op(t, v[0])?;
                weighted_sum(t, y, seed)
            }));
        }
        out.push((name, worst));
    }
    for (name, op) in binary_ops() {
        let mut worst: f64 = 0.0;
        for seed in 0..seeds {
            let mut r = rng(seed + 1000);
            let a = random_tensor(&[4, 3], -2.0, 2.0, &mut r);
            let b = random_tensor(&[4, 3], 0.5, 2.0, &mut r);
            let bias = random_tensor(&[3], 0.5, 2.0, &mut r);
            for rhs in [b, bias] {
                worst = worst.max(gradcheck(&[a.clone(), rhs], |t, v| {
                    let y = op(t, v[0], v[1])?;
                    weighted_sum(t, y, seed)
                }));
            }
        }
        out.push((name, worst));
    }
    let (mut mm, mut cat, mut det, mut tr, mut qn) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..seeds {
        let mut r = rng(seed + 2000);
        let a = random_tensor(&[5, 3], -1.0, 1.0, &mut r);
        let b = random_tensor(&[3, 4], -1.0, 1.0, &mut r);
        mm = mm.max(gradcheck(&[a.clone(), b], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, seed)
        }));
        let c = random_tensor(&[5, 2], -1.0, 1.0, &mut r);
        cat = cat.max(gradcheck(&[a, c], |t, v| {
            let y = t.concat(&[v[0], v[1]])?;
            weighted_sum(t, y, seed)
        }));
        let mut r = rng(seed + 3000);
        let f = random_tensor(&[4, 3, 3], -1.5, 1.5, &mut r);
        det = det.max(gradcheck(&[f.clone()], |t, v| {
            let y = t.det3(v[0])?;
            weighted_sum(t, y, seed)
        }));
        tr = tr.max(gradcheck(&[f], |t, v| {
            let y = t.trace3(v[0])?;
            weighted_sum(t, y, seed)
        }));
        let q = random_tensor(&[6, 4], -1.0, 1.0, &mut r);
        qn = qn.max(gradcheck(&[q], |t, v| {
            let y = t.quat_normalize(v[0])?;
            weighted_sum(t, y, seed)
        }));
    }
    out.extend([("matmul", mm), ("concat", cat), ("det3", det), ("trace3", tr), ("quat_normalize", qn)]);
    out.push(("mlp", mlp_gradcheck(seeds)));
    out
}

fn mlp_gradcheck(seeds: u64) -> f64 {
    let mlp = Mlp::new("net", vec![3, 8, 8, 2]);
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut r = rng(seed + 4000);
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut r);
        let x = random_tensor(&[6, 3], -1.0, 1.0, &mut r);
        let names: Vec<String> = store.names().map(String::from).collect();
        let mut inputs: Vec<Tensor> = names.iter().map(|n| store.get(n).unwrap().clone()).collect();
        // Non-zero biases so every path is exercised.
        for t in inputs.iter_mut() {
            if t.rank() == 1 {
                for v in t.data_mut() {
                    *v = r.gen_range(-0.5..0.5);
                }
            }
        }
        worst = worst.max(gradcheck(&inputs, |t, vs| {
            let vars = names.iter().cloned().zip(vs.iter().copied()).collect();
            let xv = t.constant(x.clone());
            let y = mlp.forward(t, &vars, xv)?;
            let s = t.softplus(y)?;
            t.mean(s)
        }));
    }
    worst
}

/// Loss gradient of a stage-2 training step against central differences,
/// for sampled entries of the weight network, the handle transforms and
/// the material network (N=200, J=3). Returns `(entry, relative error)`.
pub fn pipeline_gradcheck() -> Vec<(String, f64)> {
    let (g, d) = gen_scene(SceneKind::TwoCubeHinge, &SceneParams { num_points: 200, num_frames: 4, ..Default::default() }).unwrap();
    let cfg = TrainConfig {
        num_handles: 3,
        knn: 8,
        epochs: 10,
        stage1_epochs: Some(1),
        eigen: EigenConfig { width: 16, layers: 3 },
        material: MaterialNetConfig { hidden: 16, global_tokens: 32, ..Default::default() },
        ..Default::default()
    };
    let mut t = Trainer::new(cfg, g, d).unwrap();
    t.step().unwrap();
    let ctx = t.prepare_context().unwrap();
    assert_eq!(ctx.stage, 2);
    let (_, gd, gm) = t.loss_and_grads(&ctx).unwrap();
    let cases = [
        (true, "eigen.l1.weight", 5),
        (true, "eigen.l2.bias", 1),
        (true, "T", 7 * 3 + 5),
        (true, "T", 7 * 4 + 1),
        (false, "material.b0.global.q.weight", 3),
        (false, "material.head.bias", 2),
        (false, "material.feature_embed.weight", 11),
    ];
    let mut out = Vec::new();
    for (deform, name, idx) in cases {
        let analytic = if deform { &gd } else { &gm }[name].data()[idx];
        let h = 1e-5;
        let eval = |delta: f64| {
            let mut ds = t.deform_params().clone();
            let mut ms = t.material_params().clone();
            let store = if deform { &mut ds } else { &mut ms };
            let mut v = store.get(name).unwrap().clone();
            v.data_mut()[idx] += delta;
            store.set(name, v).unwrap();
            t.loss_value(&ds, &ms, &ctx).unwrap()
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        out.push((format!("{name}[{idx}]"), rel));
    }
    out
}

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::feature_dim;
use crate::ad::nn::{init_linear, linear, project};
use crate::ad::{AdError, CustomOp, ParamStore, Tape, Tensor, Var};
use crate::geometry::{KnnIndex, Point};

pub const MATERIAL_PREFIX: &str = "material";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialNetConfig {
    pub hidden: usize,
    pub blocks: usize,
    /// Upper bound on tokens seen by global attention.
    pub global_tokens: usize,
    pub e_min: f64,
    pub e_scale: f64,
    /// Initial output bias; sets the uniform starting stiffness.
    pub head_bias: f64,
}

impl Default for MaterialNetConfig {
    fn default() -> Self {
        MaterialNetConfig { hidden: 64, blocks: 2, global_tokens: 256, e_min: 1e-2, e_scale: 1e4, head_bias: 0.0 }
    }
}

/// Single-head attention of every point over its own neighbor list.
///
/// Inputs `Q, K, V` are `[N, d]`; `table` holds `N × M` token indices.
pub struct LocalAttentionOp {
    pub table: Arc<Vec<usize>>,
    pub width: usize,
}

impl LocalAttentionOp {
    fn weights(&self, q: &[f64], k: &Tensor, d: usize, i: usize) -> Vec<f64> {
        let m = self.width;
        let scale = 1.0 / (d as f64).sqrt();
        let idx = &self.table[i * m..(i + 1) * m];
        let s: Vec<f64> = idx.iter().map(|&j| scale * q.iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>()).collect();
        let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }
}

impl CustomOp for LocalAttentionOp {
    fn name(&self) -> &'static str {
        "local_attention"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, AdError> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        if q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape() {
            return Err(AdError::Shape {
                op: "local_attention",
                detail: format!("{:?} {:?} {:?}", q.shape(), k.shape(), v.shape()),
            });
        }
        let (n, d) = (q.shape()[0], q.shape()[1]);
        if self.table.len() != n * self.width {
            return Err(AdError::Shape { op: "local_attention", detail: format!("table for {} points", self.table.len() / self.width) });
        }
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let a = self.weights(q.row(i), k, d, i);
            let o = &mut out[i * d..(i + 1) * d];
            for (m, &j) in self.table[i * self.width..(i + 1) * self.width].iter().enumerate() {
                for (oc, vc) in o.iter_mut().zip(v.row(j)) {
                    *oc += a[m] * vc;
                }
            }
        }
        Ok(Tensor::from_parts(vec![n, d], out))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let (n, d) = (q.shape()[0], q.shape()[1]);
        let scale = 1.0 / (d as f64).sqrt();
        let (mut gq, mut gk, mut gv) = (vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]);
        for i in 0..n {
            let a = self.weights(q.row(i), k, d, i);
            let go = grad.row(i);
            let idx = &self.table[i * self.width..(i + 1) * self.width];
            let da: Vec<f64> = idx.iter().map(|&j| go.iter().zip(v.row(j)).map(|(x, y)| x * y).sum()).collect();
            let dot: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
            for (m, &j) in idx.iter().enumerate() {
                let ds = a[m] * (da[m] - dot) * scale;
                for c in 0..d {
                    gv[j * d + c] += a[m] * go[c];
                    gq[i * d + c] += ds * k.row(j)[c];
                    gk[j * d + c] += ds * q.row(i)[c];
                }
            }
        }
        vec![
            Some(Tensor::from_parts(vec![n, d], gq)),
            Some(Tensor::from_parts(vec![n, d], gk)),
            Some(Tensor::from_parts(vec![n, d], gv)),
        ]
    }
}

/// Attention network mapping rest points (queries) and per-point features
/// (keys and values) to four positive stiffness channels.
#[derive(Clone, Debug)]
pub struct MaterialNet {
    pub config: MaterialNetConfig,
    num_handles: usize,
    center: Point,
    scale: f64,
    table: Arc<Vec<usize>>,
    width: usize,
    tokens: Arc<Vec<usize>>,
}

impl MaterialNet {
    /// `index` supplies the local attention neighborhoods (each point also
    /// attends to itself). The global token subset is drawn from `rng`.
    pub fn new(
        config: MaterialNetConfig,
        num_handles: usize,
        center: Point,
        scale: f64,
        index: &KnnIndex,
        rng: &mut impl Rng,
    ) -> Self {
        let n = index.len();
        let width = index.k() + 1;
        let mut table = Vec::with_capacity(n * width);
        for i in 0..n {
            table.push(i);
            table.extend_from_slice(index.neighbors(i));
        }
        let s = config.global_tokens.max(1);
        let mut tokens: Vec<usize> = if n <= s { (0..n).collect() } else { sample(rng, n, s).into_vec() };
        tokens.sort_unstable();
        MaterialNet { config, num_handles, center, scale, table: Arc::new(table), width, tokens: Arc::new(tokens) }
    }

    pub fn num_handles(&self) -> usize {
        self.num_handles
    }

    pub fn global_tokens(&self) -> &[usize] {
        &self.tokens
    }

    fn name(&self, s: &str) -> String {
        format!("{MATERIAL_PREFIX}.{s}")
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let d = self.config.hidden;
        init_linear(store, &self.name("query_embed"), 3, d, rng);
        init_linear(store, &self.name("feature_embed"), feature_dim(self.num_handles), d, rng);
        for b in 0..self.config.blocks {
            for p in ["local.q", "local.k", "local.v", "global.q", "global.k", "global.v"] {
                init_linear(store, &self.name(&format!("b{b}.{p}")), d, d, rng);
            }
            init_linear(store, &self.name(&format!("b{b}.local.out")), d, d, rng);
            init_linear(store, &self.name(&format!("b{b}.global.out")), d, d, rng);
            init_linear(store, &self.name(&format!("b{b}.ff1")), d, 2 * d, rng);
            init_linear(store, &self.name(&format!("b{b}.ff2")), 2 * d, d, rng);
        }
        store.insert(self.name("head.weight"), Tensor::zeros(&[d, 4]));
        store.insert(self.name("head.bias"), Tensor::full(&[4], self.config.head_bias));
    }

    pub fn query_input(&self, points: &[Point]) -> Tensor {
        let data = points.iter().flat_map(|p| (0..3).map(move |k| (p[k] - self.center[k]) / self.scale)).collect();
        Tensor::new(vec![points.len(), 3], data).expect("N×3")
    }

    /// `[N, 4]` stiffness `E_min + E_scale · softplus(head)`.
    pub fn forward(&self, tape: &mut Tape, vars: &BTreeMap<String, Var>, query: Var, features: Var) -> Result<Var, AdError> {
        let d = self.config.hidden;
        let mut h = linear(tape, vars, &self.name("query_embed"), query)?;
        let f = linear(tape, vars, &self.name("feature_embed"), features)?;
        let f = tape.elu(f)?;
        let local = Arc::new(LocalAttentionOp { table: self.table.clone(), width: self.width });
        for b in 0..self.config.blocks {
            let n = |s: &str| self.name(&format!("b{b}.{s}"));
            // Local cross attention: points query their neighbors' features.
            let q = project(tape, vars, &n("local.q"), h)?;
            let k = project(tape, vars, &n("local.k"), f)?;
            let v = project(tape, vars, &n("local.v"), f)?;
            let a = tape.apply(local.clone(), &[q, k, v])?;
            let a = linear(tape, vars, &n("local.out"), a)?;
            h = tape.add(h, a)?;
            // Global self attention over the token subset.
            let q = project(tape, vars, &n("global.q"), h)?;
            let sub = tape.gather_rows(h, self.tokens.clone())?;
            let k = project(tape, vars, &n("global.k"), sub)?;
            let v = project(tape, vars, &n("global.v"), sub)?;
            let kt = tape.transpose(k)?;
            let s = tape.matmul(q, kt)?;
            let s = tape.scale(s, 1.0 / (d as f64).sqrt())?;
            let att = tape.softmax(s)?;
            let a = tape.matmul(att, v)?;
            let a = linear(tape, vars, &n("global.out"), a)?;
            h = tape.add(h, a)?;
            let z = linear(tape, vars, &n("ff1"), h)?;
            let z = tape.elu(z)?;
            let z = linear(tape, vars, &n("ff2"), z)?;
            h = tape.add(h, z)?;
        }
        let out = linear(tape, vars, &self.name("head"), h)?;
        let sp = tape.softplus(out)?;
        let e = tape.scale(sp, self.config.e_scale)?;
        tape.offset(e, self.config.e_min)
    }

    pub fn eval(&self, store: &ParamStore, points: &[Point], features: &Tensor) -> Result<Tensor, AdError> {
        let mut tape = Tape::untaped();
        let vars = store.bind(&mut tape);
        let q = tape.constant(self.query_input(points));
        let f = tape.constant(features.clone());
        let e = self.forward(&mut tape, &vars, q, f)?;
        Ok(tape.value(e).clone())
    }

    /// Uniform stiffness produced by a zero head at bias `b`.
    pub fn uniform_stiffness(&self, b: f64) -> f64 {
        let sp = if b > 30.0 { b } else { b.exp().ln_1p() };
        self.config.e_min + self.config.e_scale * sp
    }
}

use std::collections::BTreeMap;

use rand::Rng;

use super::{AdError, ParamStore, Tape, Tensor, Var};

/// Registers `{name}.weight` (`fan_in × fan_out`, Glorot-uniform) and a
/// zero `{name}.bias`.
pub fn init_linear(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
    store.insert(format!("{name}.weight"), Tensor::from_parts(vec![fan_in, fan_out], w));
    store.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
}

pub fn linear(tape: &mut Tape, vars: &BTreeMap<String, Var>, name: &str, x: Var) -> Result<Var, AdError> {
    let w = lookup(vars, &format!("{name}.weight"))?;
    let b = lookup(vars, &format!("{name}.bias"))?;
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

/// `x W` without bias.
pub fn project(tape: &mut Tape, vars: &BTreeMap<String, Var>, name: &str, x: Var) -> Result<Var, AdError> {
    let w = lookup(vars, &format!("{name}.weight"))?;
    tape.matmul(x, w)
}

pub fn lookup(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var, AdError> {
    vars.get(name).copied().ok_or_else(|| AdError::Shape { op: "lookup", detail: format!("missing parameter {name}") })
}

/// Fully connected stack with ELU between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    prefix: String,
    sizes: Vec<usize>,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        Mlp { prefix: prefix.into(), sizes }
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layer_name(&self, i: usize) -> String {
        format!("{}.l{}", self.prefix, i)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for i in 0..self.num_layers() {
            init_linear(store, &self.layer_name(i), self.sizes[i], self.sizes[i + 1], rng);
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &BTreeMap<String, Var>, x: Var) -> Result<Var, AdError> {
        let mut h = x;
        for i in 0..self.num_layers() {
            h = linear(tape, vars, &self.layer_name(i), h)?;
            if i + 1 < self.num_layers() {
                h = tape.elu(h)?;
            }
        }
        Ok(h)
    }
}

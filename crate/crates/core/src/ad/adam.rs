use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AdError, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let n = value.numel();
        Param { value, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

/// Named parameters forming one optimizer group: all of them share a
/// single Adam step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), Param::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    /// Replaces a parameter value in place, keeping its moments.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), AdError> {
        let p = self.params.get_mut(name).ok_or_else(|| AdError::Shape {
            op: "param_set",
            detail: format!("unknown parameter {name}"),
        })?;
        if p.value.shape() != value.shape() {
            return Err(AdError::Shape {
                op: "param_set",
                detail: format!("{name}: {:?} vs {:?}", p.value.shape(), value.shape()),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BTreeMap<String, Var> {
        self.params.iter().map(|(k, p)| (k.clone(), tape.leaf(p.value.clone()))).collect()
    }

    /// One bias-corrected Adam update. Parameters without a gradient entry
    /// are left untouched, but the shared step counter still advances.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor>, cfg: &AdamConfig) -> Result<(), AdError> {
        for (name, g) in grads {
            let p = self.params.get(name).ok_or_else(|| AdError::Shape {
                op: "adam_step",
                detail: format!("gradient for unknown parameter {name}"),
            })?;
            if p.value.shape() != g.shape() {
                return Err(AdError::Shape {
                    op: "adam_step",
                    detail: format!("{name}: param {:?} vs grad {:?}", p.value.shape(), g.shape()),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, g) in grads {
            let p = self.params.get_mut(name).expect("checked above");
            let data = p.value.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * gi;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<'a>(grads: impl IntoIterator<Item = &'a mut Tensor>, max_norm: f64) -> f64 {
    let mut all: Vec<&mut Tensor> = grads.into_iter().collect();
    let norm = all.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in all.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

//! Extended anisotropic Neo-Hookean energy density with analytic first and
//! second derivatives.
//!
//! Matrices are row-major `[f64; 9]`; the 9×9 Hessian uses the same
//! row-major `vec(F)` ordering. Anisotropy axes are the world axes.

mod op;
pub mod oracle;

pub use op::EnergyDensityOp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{cofactor3, det3};
use crate::material::{alpha_from_e, lame_from_e, MaterialError};

pub type Mat3 = [f64; 9];
pub type Hess9 = [f64; 81];

pub const IDENTITY: Mat3 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

/// Below this determinant the log barrier of the corrected model switches to
/// its quadratic Taylor extension, keeping the energy finite for inverted
/// elements.
pub const LOG_BARRIER_FLOOR: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("non-finite energy density at point {point}")]
    NonFinite { point: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Material(#[from] MaterialError),
}

/// Per-point elastic constants.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Material {
    pub mu: f64,
    pub lambda: f64,
    pub alpha: [f64; 3],
}

impl Material {
    /// From a stiffness row `[E_iso, E_x, E_y, E_z]`.
    pub fn from_stiffness(e: &[f64], nu: f64) -> Result<Self, EnergyError> {
        let (mu, lambda) = lame_from_e(e[0], nu)?;
        Ok(Material {
            mu,
            lambda,
            alpha: [alpha_from_e(e[1], nu)?, alpha_from_e(e[2], nu)?, alpha_from_e(e[3], nu)?],
        })
    }
}

/// Selects the isotropic model. The plain form has rest stress `μI`; the
/// corrected form adds `−μ ln det F`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EnergyOptions {
    pub corrected_neohookean: bool,
}

fn matmul_t_a(f: &Mat3) -> Mat3 {
    let mut c = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            c[i * 3 + j] = (0..3).map(|r| f[r * 3 + i] * f[r * 3 + j]).sum();
        }
    }
    c
}

/// Right Cauchy-Green tensor `FᵀF`.
pub fn cauchy_green(f: &Mat3) -> Mat3 {
    matmul_t_a(f)
}

/// `(μ/2)(tr C − 3) + (λ/2)(det F − 1)²`.
pub fn psi_iso(f: &Mat3, mu: f64, lambda: f64) -> f64 {
    let tr: f64 = f.iter().map(|v| v * v).sum();
    let j = det3(f);
    0.5 * mu * (tr - 3.0) + 0.5 * lambda * (j - 1.0) * (j - 1.0)
}

/// `Σ_k (α_k/2)(C_kk − 1)²`.
pub fn psi_aniso(f: &Mat3, alpha: &[f64; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let ckk = f[k] * f[k] + f[3 + k] * f[3 + k] + f[6 + k] * f[6 + k];
            0.5 * alpha[k] * (ckk - 1.0) * (ckk - 1.0)
        })
        .sum()
}

/// `−ln J` with a quadratic continuation below [`LOG_BARRIER_FLOOR`]; returns
/// value, first and second derivative in `J`.
fn neg_log(j: f64) -> (f64, f64, f64) {
    let j0 = LOG_BARRIER_FLOOR;
    if j >= j0 {
        (-j.ln(), -1.0 / j, 1.0 / (j * j))
    } else {
        let d = j - j0;
        (-(j0.ln() + d / j0 - d * d / (2.0 * j0 * j0)), -(1.0 / j0 - d / (j0 * j0)), 1.0 / (j0 * j0))
    }
}

/// Isotropic density under the selected model.
pub fn psi_iso_model(f: &Mat3, mu: f64, lambda: f64, opts: EnergyOptions) -> f64 {
    let base = psi_iso(f, mu, lambda);
    if opts.corrected_neohookean {
        base + mu * neg_log(det3(f)).0
    } else {
        base
    }
}

pub fn psi_total(f: &Mat3, m: &Material, opts: EnergyOptions) -> f64 {
    psi_iso_model(f, m.mu, m.lambda, opts) + psi_aniso(f, &m.alpha)
}

/// `∂Ψ/∂F`.
pub fn stress(f: &Mat3, m: &Material, opts: EnergyOptions) -> Mat3 {
    let j = det3(f);
    let cof = cofactor3(f);
    let mut p = [0.0; 9];
    let mut det_coeff = m.lambda * (j - 1.0);
    if opts.corrected_neohookean {
        det_coeff += m.mu * neg_log(j).1;
    }
    for i in 0..9 {
        p[i] = m.mu * f[i] + det_coeff * cof[i];
    }
    for k in 0..3 {
        let ckk = f[k] * f[k] + f[3 + k] * f[3 + k] + f[6 + k] * f[6 + k];
        let s = 2.0 * m.alpha[k] * (ckk - 1.0);
        for r in 0..3 {
            p[r * 3 + k] += s * f[r * 3 + k];
        }
    }
    p
}

fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// `∂² det F / ∂F_rc ∂F_pq`, row-major in both index pairs.
pub fn det_hessian(f: &Mat3) -> Hess9 {
    let mut h = [0.0; 81];
    for r in 0..3 {
        for c in 0..3 {
            for p in 0..3 {
                for q in 0..3 {
                    let mut v = 0.0;
                    for s in 0..3 {
                        let e1 = levi_civita(r, p, s);
                        if e1 == 0.0 {
                            continue;
                        }
                        for t in 0..3 {
                            v += e1 * levi_civita(c, q, t) * f[s * 3 + t];
                        }
                    }
                    h[(r * 3 + c) * 9 + p * 3 + q] = v;
                }
            }
        }
    }
    h
}

/// `∂²Ψ/∂vec(F)²` (symmetric).
pub fn hessian(f: &Mat3, m: &Material, opts: EnergyOptions) -> Hess9 {
    let j = det3(f);
    let cof = cofactor3(f);
    let d2j = det_hessian(f);
    let (mut d1, mut d2) = (m.lambda * (j - 1.0), m.lambda);
    if opts.corrected_neohookean {
        let (_, g1, g2) = neg_log(j);
        d1 += m.mu * g1;
        d2 += m.mu * g2;
    }
    let mut h = [0.0; 81];
    for a in 0..9 {
        h[a * 9 + a] += m.mu;
        for b in 0..9 {
            h[a * 9 + b] += d2 * cof[a] * cof[b] + d1 * d2j[a * 9 + b];
        }
    }
    for k in 0..3 {
        if m.alpha[k] == 0.0 {
            continue;
        }
        let ckk = f[k] * f[k] + f[3 + k] * f[3 + k] + f[6 + k] * f[6 + k];
        // vec(F A_k) is nonzero only in column k.
        for r in 0..3 {
            for p in 0..3 {
                h[(r * 3 + k) * 9 + p * 3 + k] += 4.0 * m.alpha[k] * f[r * 3 + k] * f[p * 3 + k];
            }
            h[(r * 3 + k) * 9 + r * 3 + k] += 2.0 * m.alpha[k] * (ckk - 1.0);
        }
    }
    h
}

/// Per-point energy densities and the volume-weighted total.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyDensityReport {
    pub w_iso: Vec<f64>,
    pub w_aniso: Vec<f64>,
    pub w_total: Vec<f64>,
    pub total: f64,
}

/// Integrates the density over the domain with per-point quadrature
/// volumes.
pub fn total_energy(
    grads: &[Mat3],
    materials: &[Material],
    volumes: &[f64],
    opts: EnergyOptions,
) -> Result<EnergyDensityReport, EnergyError> {
    if grads.len() != materials.len() || grads.len() != volumes.len() {
        return Err(EnergyError::Contract(format!(
            "lengths differ: {} gradients, {} materials, {} volumes",
            grads.len(),
            materials.len(),
            volumes.len()
        )));
    }
    let n = grads.len();
    let mut rep = EnergyDensityReport { w_iso: vec![0.0; n], w_aniso: vec![0.0; n], w_total: vec![0.0; n], total: 0.0 };
    for i in 0..n {
        let wi = psi_iso_model(&grads[i], materials[i].mu, materials[i].lambda, opts);
        let wa = psi_aniso(&grads[i], &materials[i].alpha);
        let w = wi + wa;
        if !w.is_finite() {
            return Err(EnergyError::NonFinite { point: i });
        }
        rep.w_iso[i] = wi;
        rep.w_aniso[i] = wa;
        rep.w_total[i] = w;
        rep.total += volumes[i] * w;
    }
    Ok(rep)
}

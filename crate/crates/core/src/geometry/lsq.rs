use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{KnnIndex, RestGeometry};
use crate::ad::{AdError, CustomOp, Tensor};

/// Relative eigenvalue cutoff below which a neighborhood direction counts
/// as missing (coplanar or collinear neighbors).
const RANK_TOL: f64 = 1e-8;
const DAMPING: f64 = 1e-8;

/// Precomputed linear map from per-point values to their kNN least-squares
/// spatial gradients.
///
/// For point `i` with neighbor offsets `d_m = x_m - x_i` the gradient is
/// `g_i = M_i · (v_m - v_i)`. `M_i` is a twice-iterated Tikhonov inverse of
/// the normal equations, which removes the first-order damping bias so
/// affine fields are reproduced to rounding error. Directions whose
/// eigenvalue falls below `RANK_TOL` of the largest are dropped.
#[derive(Clone, Debug)]
pub struct LsqGradient {
    k: usize,
    neighbors: Vec<usize>,
    /// `[i][m][axis]`, flattened.
    coeff: Vec<f64>,
    rank_deficient: Vec<bool>,
}

impl LsqGradient {
    pub fn new(geom: &RestGeometry, index: &KnnIndex) -> Self {
        let k = index.k();
        let n = geom.len();
        let pts = geom.points();
        let mean_d2 = {
            let s: f64 = (0..n).map(|i| index.distances_sq(i).iter().map(|d| d.sqrt()).sum::<f64>()).sum();
            let d = s / (n * k) as f64;
            d * d
        };
        let lambda = DAMPING * mean_d2;
        let mut coeff = vec![0.0; n * k * 3];
        let mut rank_deficient = vec![false; n];
        for i in 0..n {
            let offs: Vec<Vector3<f64>> = index
                .neighbors(i)
                .iter()
                .map(|&j| Vector3::new(pts[j][0] - pts[i][0], pts[j][1] - pts[i][1], pts[j][2] - pts[i][2]))
                .collect();
            let mut gram = Matrix3::zeros();
            for d in &offs {
                gram += d * d.transpose();
            }
            let eig = SymmetricEigen::new(gram);
            let top = eig.eigenvalues.max();
            let mut inv = Matrix3::zeros();
            for a in 0..3 {
                let s = eig.eigenvalues[a];
                if s < RANK_TOL * top || top <= 0.0 {
                    rank_deficient[i] = true;
                    continue;
                }
                let f = (s + 2.0 * lambda) / ((s + lambda) * (s + lambda));
                let u = eig.eigenvectors.column(a);
                inv += f * u * u.transpose();
            }
            for (m, d) in offs.iter().enumerate() {
                let c = inv * d;
                coeff[(i * k + m) * 3..(i * k + m) * 3 + 3].copy_from_slice(c.as_slice());
            }
        }
        LsqGradient { k, neighbors: index.table().to_vec(), coeff, rank_deficient }
    }

    pub fn len(&self) -> usize {
        self.rank_deficient.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rank_deficient.is_empty()
    }

    /// Points whose neighborhood does not span all three axes.
    pub fn rank_deficient(&self) -> &[bool] {
        &self.rank_deficient
    }

    /// Gradients of `values` (N×C, row-major) as N×C×3.
    pub fn apply(&self, values: &[f64], channels: usize) -> Vec<f64> {
        let n = self.len();
        assert_eq!(values.len(), n * channels, "lsq apply: value length");
        let mut out = vec![0.0; n * channels * 3];
        for i in 0..n {
            for m in 0..self.k {
                let nb = self.neighbors[i * self.k + m];
                let c = &self.coeff[(i * self.k + m) * 3..(i * self.k + m) * 3 + 3];
                for ch in 0..channels {
                    let dv = values[nb * channels + ch] - values[i * channels + ch];
                    let o = &mut out[(i * channels + ch) * 3..(i * channels + ch) * 3 + 3];
                    o[0] += c[0] * dv;
                    o[1] += c[1] * dv;
                    o[2] += c[2] * dv;
                }
            }
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply).
    pub fn apply_transpose(&self, grad: &[f64], channels: usize) -> Vec<f64> {
        let n = self.len();
        assert_eq!(grad.len(), n * channels * 3, "lsq transpose: grad length");
        let mut out = vec![0.0; n * channels];
        for i in 0..n {
            for m in 0..self.k {
                let nb = self.neighbors[i * self.k + m];
                let c = &self.coeff[(i * self.k + m) * 3..(i * self.k + m) * 3 + 3];
                for ch in 0..channels {
                    let g = &grad[(i * channels + ch) * 3..(i * channels + ch) * 3 + 3];
                    let s = c[0] * g[0] + c[1] * g[1] + c[2] * g[2];
                    out[nb * channels + ch] += s;
                    out[i * channels + ch] -= s;
                }
            }
        }
        out
    }
}

/// Tape op: `[N, C]` values to `[N, 3C]` gradients (axis fastest). Positions
/// are baked into the operator, so gradients reach the values only.
pub struct LsqGradientOp(pub std::sync::Arc<LsqGradient>);

impl CustomOp for LsqGradientOp {
    fn name(&self) -> &'static str {
        "lsq_gradient"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, AdError> {
        let w = inputs[0];
        if w.rank() != 2 || w.shape()[0] != self.0.len() {
            return Err(AdError::Shape { op: "lsq_gradient", detail: format!("{:?} for N={}", w.shape(), self.0.len()) });
        }
        let c = w.shape()[1];
        Ok(Tensor::from_parts(vec![self.0.len(), 3 * c], self.0.apply(w.data(), c)))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let c = inputs[0].shape()[1];
        vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), self.0.apply_transpose(grad.data(), c)))]
    }
}

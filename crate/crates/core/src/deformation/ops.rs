use std::sync::Arc;

use super::rigid::Rotation;
use crate::ad::{AdError, CustomOp, Tensor};
use crate::energy::Mat3;
use crate::geometry::Point;

/// Rotations of every handle in a `[J, 7]` row-major transform block.
pub fn handle_rotations(transforms: &[f64]) -> Result<Vec<Rotation>, AdError> {
    transforms
        .chunks(7)
        .map(|h| Rotation::from_raw(&h[..4]).ok_or(AdError::NonFinite { op: "quat_normalize" }))
        .collect()
}

fn translation(transforms: &[f64], j: usize) -> [f64; 3] {
    [transforms[7 * j + 4], transforms[7 * j + 5], transforms[7 * j + 6]]
}

/// `x̂_i = Σ_j w_ij (R_j x_i + t_j)` for weights `[N, J]` and transforms
/// `[J, 7]`.
pub fn apply_deformation(w: &[f64], transforms: &[f64], points: &[Point]) -> Result<Vec<Point>, AdError> {
    let rots = handle_rotations(transforms)?;
    let nh = rots.len();
    if w.len() != points.len() * nh {
        return Err(AdError::Shape { op: "blend", detail: format!("{} weights for {} points × {nh} handles", w.len(), points.len()) });
    }
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut out = [0.0; 3];
            for (j, rot) in rots.iter().enumerate() {
                let y = rot.apply(x);
                let t = translation(transforms, j);
                let wij = w[i * nh + j];
                for a in 0..3 {
                    out[a] += wij * (y[a] + t[a]);
                }
            }
            out
        })
        .collect())
}

/// `F_i = Σ_j [w_ij R_j + (R_j x_i + t_j) ⊗ g_ij]` with spatial weight
/// gradients `g` laid out `[N, J, 3]`.
pub fn deformation_gradient(w: &[f64], g: &[f64], transforms: &[f64], points: &[Point]) -> Result<Vec<Mat3>, AdError> {
    let rots = handle_rotations(transforms)?;
    let nh = rots.len();
    if w.len() != points.len() * nh || g.len() != 3 * w.len() {
        return Err(AdError::Shape { op: "deformation_gradient", detail: format!("w {} g {} for N={}", w.len(), g.len(), points.len()) });
    }
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut f = [0.0; 9];
            for (j, rot) in rots.iter().enumerate() {
                let wij = w[i * nh + j];
                let t = translation(transforms, j);
                let y = rot.apply(x);
                let gij = &g[(i * nh + j) * 3..(i * nh + j) * 3 + 3];
                for r in 0..3 {
                    for c in 0..3 {
                        f[r * 3 + c] += wij * rot.r[r * 3 + c] + (y[r] + t[r]) * gij[c];
                    }
                }
            }
            f
        })
        .collect())
}

/// Accumulates `∂L/∂R_j` into raw-quaternion gradient entries.
fn push_quat_grad(out: &mut [f64], j: usize, rot: &Rotation, grad_r: &Mat3) {
    for k in 0..4 {
        out[7 * j + k] += (0..9).map(|e| rot.dr[k][e] * grad_r[e]).sum::<f64>();
    }
}

fn check_inputs(op: &'static str, w: &Tensor, tr: &Tensor, n: usize) -> Result<usize, AdError> {
    if tr.rank() != 2 || tr.shape()[1] != 7 {
        return Err(AdError::Shape { op, detail: format!("transforms must be [J, 7], got {:?}", tr.shape()) });
    }
    let nh = tr.shape()[0];
    if w.shape() != [n, nh] {
        return Err(AdError::Shape { op, detail: format!("weights {:?}, expected [{n}, {nh}]", w.shape()) });
    }
    Ok(nh)
}

/// Tape op for [`apply_deformation`]: inputs `w [N, J]`, `T [J, 7]`.
pub struct BlendOp {
    pub points: Arc<Vec<Point>>,
}

impl CustomOp for BlendOp {
    fn name(&self) -> &'static str {
        "blend"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, AdError> {
        check_inputs("blend", inputs[0], inputs[1], self.points.len())?;
        let x = apply_deformation(inputs[0].data(), inputs[1].data(), &self.points)?;
        Ok(Tensor::from_parts(vec![x.len(), 3], x.into_iter().flatten().collect()))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (w, tr) = (inputs[0].data(), inputs[1].data());
        let rots = handle_rotations(tr).expect("checked in forward");
        let nh = rots.len();
        let mut gw = vec![0.0; w.len()];
        let mut gt = vec![0.0; tr.len()];
        let mut grad_r = vec![[0.0; 9]; nh];
        for (i, x) in self.points.iter().enumerate() {
            let gi = &grad.data()[3 * i..3 * i + 3];
            for (j, rot) in rots.iter().enumerate() {
                let y = rot.apply(x);
                let t = translation(tr, j);
                gw[i * nh + j] = (0..3).map(|a| gi[a] * (y[a] + t[a])).sum();
                let wij = w[i * nh + j];
                for a in 0..3 {
                    gt[7 * j + 4 + a] += wij * gi[a];
                    for b in 0..3 {
                        grad_r[j][a * 3 + b] += wij * gi[a] * x[b];
                    }
                }
            }
        }
        for (j, rot) in rots.iter().enumerate() {
            push_quat_grad(&mut gt, j, rot, &grad_r[j]);
        }
        vec![
            Some(Tensor::from_parts(inputs[0].shape().to_vec(), gw)),
            Some(Tensor::from_parts(inputs[1].shape().to_vec(), gt)),
        ]
    }
}

/// Tape op for [`deformation_gradient`]: inputs `w [N, J]`, `g [N, 3J]`,
/// `T [J, 7]`; output `[N, 9]`.
pub struct DeformGradOp {
    pub points: Arc<Vec<Point>>,
}

impl CustomOp for DeformGradOp {
    fn name(&self) -> &'static str {
        "deformation_gradient"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, AdError> {
        let nh = check_inputs("deformation_gradient", inputs[0], inputs[2], self.points.len())?;
        if inputs[1].shape() != [self.points.len(), 3 * nh] {
            return Err(AdError::Shape { op: "deformation_gradient", detail: format!("g {:?}", inputs[1].shape()) });
        }
        let f = deformation_gradient(inputs[0].data(), inputs[1].data(), inputs[2].data(), &self.points)?;
        Ok(Tensor::from_parts(vec![f.len(), 9], f.into_iter().flatten().collect()))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (w, g, tr) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let rots = handle_rotations(tr).expect("checked in forward");
        let nh = rots.len();
        let mut gw = vec![0.0; w.len()];
        let mut gg = vec![0.0; g.len()];
        let mut gt = vec![0.0; tr.len()];
        let mut grad_r = vec![[0.0; 9]; nh];
        for (i, x) in self.points.iter().enumerate() {
            let gf = &grad.data()[9 * i..9 * i + 9];
            for (j, rot) in rots.iter().enumerate() {
                let wij = w[i * nh + j];
                let t = translation(tr, j);
                let y = rot.apply(x);
                let yt = [y[0] + t[0], y[1] + t[1], y[2] + t[2]];
                let gij = &g[(i * nh + j) * 3..(i * nh + j) * 3 + 3];
                gw[i * nh + j] = (0..9).map(|e| gf[e] * rot.r[e]).sum();
                // ∂L/∂y = G g_ij
                let mut dy = [0.0; 3];
                for r in 0..3 {
                    dy[r] = (0..3).map(|c| gf[r * 3 + c] * gij[c]).sum();
                    for c in 0..3 {
                        gg[(i * nh + j) * 3 + c] += gf[r * 3 + c] * yt[r];
                    }
                }
                for r in 0..3 {
                    gt[7 * j + 4 + r] += dy[r];
                    for c in 0..3 {
                        grad_r[j][r * 3 + c] += wij * gf[r * 3 + c] + dy[r] * x[c];
                    }
                }
            }
        }
        for (j, rot) in rots.iter().enumerate() {
            push_quat_grad(&mut gt, j, rot, &grad_r[j]);
        }
        vec![
            Some(Tensor::from_parts(inputs[0].shape().to_vec(), gw)),
            Some(Tensor::from_parts(inputs[1].shape().to_vec(), gg)),
            Some(Tensor::from_parts(inputs[2].shape().to_vec(), gt)),
        ]
    }
}

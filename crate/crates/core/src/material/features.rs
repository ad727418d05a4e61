use crate::ad::Tensor;
use crate::geometry::KnnIndex;

/// Length of one feature row for `J` handles: weights, weight gradients,
/// local weight variance, weight-blended handle transform and the previous
/// energy density.
pub fn feature_dim(num_handles: usize) -> usize {
    5 * num_handles + 8
}

/// Inputs to the stiffness network, assembled outside the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialFeatures {
    pub num_handles: usize,
    /// `[N, 5J + 8]`.
    pub data: Tensor,
}

/// Builds per-point features.
///
/// * `w`: `[N, J]` blend weights
/// * `g`: `[N, 3J]` spatial weight gradients
/// * `prev_energy`: per-point energy density from the previous epoch
/// * `transforms`: `[J, 7]` handle transforms of the reference frame
/// * `length_scale`: geometric scale used to make gradients and
///   translations dimensionless
pub fn assemble_features(
    w: &[f64],
    g: &[f64],
    prev_energy: &[f64],
    transforms: &[f64],
    index: &KnnIndex,
    length_scale: f64,
) -> MaterialFeatures {
    let n = prev_energy.len();
    let nh = transforms.len() / 7;
    assert_eq!(w.len(), n * nh, "weights vs point count");
    assert_eq!(g.len(), 3 * n * nh, "gradients vs point count");
    assert_eq!(index.len(), n, "knn index vs point count");
    let dim = feature_dim(nh);
    let mut out = Vec::with_capacity(n * dim);
    for i in 0..n {
        let wi = &w[i * nh..(i + 1) * nh];
        out.extend_from_slice(wi);
        out.extend(g[i * 3 * nh..(i + 1) * 3 * nh].iter().map(|v| v * length_scale));
        let count = (index.k() + 1) as f64;
        for j in 0..nh {
            let vals = index.neighbors(i).iter().map(|&m| w[m * nh + j]).chain(std::iter::once(wi[j]));
            let mean = vals.clone().sum::<f64>() / count;
            out.push(vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count);
        }
        let mut blended = [0.0; 7];
        for j in 0..nh {
            for c in 0..7 {
                let s = if c >= 4 { 1.0 / length_scale } else { 1.0 };
                blended[c] += wi[j] * transforms[7 * j + c] * s;
            }
        }
        out.extend_from_slice(&blended);
        out.push(prev_energy[i].max(0.0).ln_1p());
    }
    MaterialFeatures { num_handles: nh, data: Tensor::new(vec![n, dim], out).expect("feature layout") }
}

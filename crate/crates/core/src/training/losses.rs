use rand::Rng;
use rand_distr::StandardNormal;

use crate::ad::{AdError, Tape, Tensor, Var};
use crate::deformation::{apply_deformation, deformation_gradient, HandleTransforms};
use crate::energy::{total_energy, EnergyError, EnergyOptions, Material};
use crate::geometry::{chamfer_distance, l2_trajectory_distance, GeometryError, Point, TrajectoryDataset};

/// Floor under the negative-sample energy before taking its reciprocal.
pub const NEG_ENERGY_FLOOR: f64 = 1e-8;

/// Noise scale of negative samples at `epoch` out of `total`:
/// `1 − γ^(e/T)`, or the same curve read backwards.
pub fn noise_schedule(epoch: usize, total: usize, gamma: f64, reverse: bool) -> f64 {
    let total = total.max(1) as f64;
    let e = (epoch as f64).min(total);
    let s = if reverse { (total - e) / total } else { e / total };
    1.0 - gamma.powf(s)
}

/// Standard-normal draws, one per transform component.
pub fn gaussian_like(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).expect("shape")
}

/// `T_neg = α_e·ε + T_pos` with fresh `ε ~ N(0, 1)`.
pub fn sample_negative_transforms(
    positive: &Tensor,
    epoch: usize,
    total: usize,
    gamma: f64,
    reverse: bool,
    rng: &mut impl Rng,
) -> Tensor {
    let alpha = noise_schedule(epoch, total, gamma, reverse);
    let eps = gaussian_like(positive.shape(), rng);
    let data = positive.data().iter().zip(eps.data()).map(|(p, e)| p + alpha * e).collect();
    Tensor::new(positive.shape().to_vec(), data).expect("same shape")
}

/// Reconstruction loss summed over trajectories and frames: L2 for tracked
/// trajectories, Chamfer otherwise.
pub fn recon_loss_value(
    w: &Tensor,
    transforms: &HandleTransforms,
    data: &TrajectoryDataset,
    points: &[Point],
) -> Result<f64, GeometryError> {
    if data.is_empty() {
        return Err(GeometryError::Contract("reconstruction loss needs at least one trajectory".into()));
    }
    let mut total = 0.0;
    for (o, tr) in data.trajectories.iter().enumerate() {
        let pred: Vec<Vec<Point>> = (0..tr.frames.len())
            .map(|t| apply_deformation(w.data(), transforms.frame(o, t), points))
            .collect::<Result<_, AdError>>()
            .map_err(|e| GeometryError::Invalid(e.to_string()))?;
        if tr.tracked {
            total += l2_trajectory_distance(&pred, &tr.frames)?;
        } else {
            for (p, f) in pred.iter().zip(&tr.frames) {
                total += chamfer_distance(p, f)?;
            }
        }
    }
    Ok(total)
}

/// Mean of `1/E` over points and channels.
pub fn stiffness_reg(tape: &mut Tape, e: Var) -> Result<Var, AdError> {
    let r = tape.reciprocal(e)?;
    tape.mean(r)
}

pub fn stiffness_reg_value(e: &Tensor) -> f64 {
    e.data().iter().map(|v| 1.0 / v).sum::<f64>() / e.numel() as f64
}

/// Positive energy, reciprocal negative energy and whether the floor was
/// hit. Each side averages the domain energy over the given frames.
#[allow(clippy::too_many_arguments)]
pub fn contrastive_terms(
    w: &[f64],
    g: &[f64],
    positive_frames: &[&[f64]],
    negative_frames: &[&[f64]],
    materials: &[Material],
    volumes: &[f64],
    points: &[Point],
    opts: EnergyOptions,
) -> Result<(f64, f64, bool), EnergyError> {
    let side = |frames: &[&[f64]]| -> Result<f64, EnergyError> {
        let mut s = 0.0;
        for tr in frames {
            let f = deformation_gradient(w, g, tr, points).map_err(|e| EnergyError::Contract(e.to_string()))?;
            s += total_energy(&f, materials, volumes, opts)?.total;
        }
        Ok(s / frames.len().max(1) as f64)
    };
    let pos = side(positive_frames)?;
    let neg = side(negative_frames)?;
    let floored = neg < NEG_ENERGY_FLOOR;
    Ok((pos, 1.0 / neg.max(NEG_ENERGY_FLOOR), floored))
}

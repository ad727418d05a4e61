use serde::{Deserialize, Serialize};

use crate::material::MaterialNetConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Observed,
    MultiTrajectory,
    NoObservation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub recon: f64,
    pub ortho: f64,
    pub energy: f64,
    pub stiffness_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { recon: 1e3, ortho: 0.1, energy: 1.0, stiffness_reg: 1e2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenConfig {
    pub width: usize,
    pub layers: usize,
}

impl Default for EigenConfig {
    fn default() -> Self {
        EigenConfig { width: 64, layers: 6 }
    }
}

/// Settings for training without observed motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomPoseConfig {
    /// Random transform samples per epoch.
    pub samples: usize,
    /// Standard deviation of the Gaussian perturbation of each transform
    /// component around identity.
    pub sigma: f64,
    /// Divide the energy by `mean(E_iso)·total volume`, making it
    /// dimensionless so it is commensurate with the orthogonality term.
    pub normalize_energy: bool,
}

impl Default for RandomPoseConfig {
    fn default() -> Self {
        RandomPoseConfig { samples: 4, sigma: 0.1, normalize_energy: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_handles: usize,
    pub knn: usize,
    pub epochs: usize,
    /// Defaults to 30% of `epochs`.
    pub stage1_epochs: Option<usize>,
    pub lr: f64,
    pub weights: LossWeights,
    /// Noise growth base of the negative-sample schedule, in `[0, 1]`.
    pub gamma: f64,
    /// Run the noise schedule backwards (large noise first).
    pub reverse_schedule: bool,
    pub negatives: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub nu: f64,
    pub corrected_neohookean: bool,
    pub grad_clip: f64,
    pub transform_init_sigma: f64,
    /// Target points kept per untracked frame (0 keeps all).
    pub chamfer_samples: usize,
    pub eigen: EigenConfig,
    pub material: MaterialNetConfig,
    pub random_pose: RandomPoseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_handles: 4,
            knn: 20,
            epochs: 2000,
            stage1_epochs: None,
            lr: 1e-3,
            weights: LossWeights::default(),
            gamma: 0.5,
            reverse_schedule: false,
            negatives: 1,
            seed: 0,
            mode: TrainMode::Observed,
            nu: 0.45,
            corrected_neohookean: true,
            grad_clip: 10.0,
            transform_init_sigma: 1e-4,
            chamfer_samples: 2000,
            eigen: EigenConfig::default(),
            material: MaterialNetConfig::default(),
            random_pose: RandomPoseConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn stage1_epochs(&self) -> usize {
        self.stage1_epochs.unwrap_or((self.epochs as f64 * 0.3).round() as usize)
    }

    /// Checks every range constraint; the error names the offending field.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let bad = |f: &str, m: String| Err((f.to_string(), m));
        if self.num_handles == 0 {
            return bad("num_handles", "must be at least 1".into());
        }
        if self.knn == 0 {
            return bad("knn", "must be at least 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        let w = &self.weights;
        for (name, v) in [("recon", w.recon), ("ortho", w.ortho), ("energy", w.energy), ("stiffness_reg", w.stiffness_reg)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(&format!("weights.{name}"), format!("must be nonnegative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", format!("must lie in [0, 1], got {}", self.gamma));
        }
        if self.stage1_epochs() > self.epochs {
            return bad("stage1_epochs", format!("{} exceeds epochs {}", self.stage1_epochs(), self.epochs));
        }
        if !(0.0..0.5).contains(&self.nu) {
            return bad("nu", format!("must lie in [0, 0.5), got {}", self.nu));
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip", format!("must be positive, got {}", self.grad_clip));
        }
        if self.negatives == 0 {
            return bad("negatives", "must be at least 1".into());
        }
        if self.transform_init_sigma < 0.0 {
            return bad("transform_init_sigma", "must be nonnegative".into());
        }
        if self.eigen.width == 0 || self.eigen.layers == 0 {
            return bad("eigen", "width and layers must be positive".into());
        }
        let m = &self.material;
        if m.hidden == 0 || !(m.e_min > 0.0) || !(m.e_scale > 0.0) {
            return bad("material", "hidden, e_min and e_scale must be positive".into());
        }
        if self.mode == TrainMode::NoObservation && (self.random_pose.samples == 0 || !(self.random_pose.sigma >= 0.0)) {
            return bad("random_pose", "needs at least one sample and sigma ≥ 0".into());
        }
        Ok(())
    }
}

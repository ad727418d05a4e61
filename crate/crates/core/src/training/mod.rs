//! Losses and the two-stage, energy-contrastive training procedure.

mod config;
mod losses;
mod trainer;

pub use config::{EigenConfig, LossWeights, RandomPoseConfig, TrainConfig, TrainMode};
pub use losses::{
    contrastive_terms, gaussian_like, noise_schedule, recon_loss_value, sample_negative_transforms, stiffness_reg,
    stiffness_reg_value, NEG_ENERGY_FLOOR,
};
pub use trainer::{EpochMetrics, LossVars, StepContext, TrainReport, Trainer};

use thiserror::Error;

use crate::ad::AdError;
use crate::geometry::io::Checkpoint;
use crate::geometry::{GeometryError, RestGeometry, TrajectoryDataset};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config field '{field}': {msg}")]
    Config { field: String, msg: String },
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite value in {term} at epoch {epoch}")]
    Numeric { term: String, epoch: usize, last_good: Option<Box<Checkpoint>> },
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Trains from scratch and returns the final checkpoint and report.
pub fn train(cfg: TrainConfig, geom: RestGeometry, data: TrajectoryDataset) -> Result<(Checkpoint, TrainReport), TrainError> {
    let mut t = Trainer::new(cfg, geom, data)?;
    let report = t.run(None)?;
    Ok((t.checkpoint(), report))
}

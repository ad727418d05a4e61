//! Stiffness field prediction and elastic constant conversions.

mod features;
mod lame;
mod net;

pub use features::{assemble_features, feature_dim, MaterialFeatures};
pub use lame::{alpha_from_e, lame_from_e};
pub use net::{LocalAttentionOp, MaterialNet, MaterialNetConfig, MATERIAL_PREFIX};

use thiserror::Error;

use crate::ad::AdError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Ad(#[from] AdError),
}

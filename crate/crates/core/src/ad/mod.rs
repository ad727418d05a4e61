//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Values are recorded on a [`Tape`] as they are computed; [`Tape::backward`]
//! then sweeps the tape in reverse creation order. Domain kernels with
//! hand-written derivatives plug in through [`CustomOp`]. Every op checks its
//! output for non-finite values so blow-ups are reported where they start.

mod adam;
pub mod nn;
mod tape;
mod tensor;

pub use adam::{clip_global_norm, AdamConfig, Param, ParamStore};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{cofactor3, det3};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

//! Dense `f64` tensors with an eager reverse-mode tape.
//!
//! Layout is NCHW throughout. Broadcasting is limited to one-element
//! tensors against anything; every other op needs explicit shapes.

mod checkpoint;
mod gradcheck;
mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{central_difference, grad_check};
pub use optim::{clip_global_norm, Adam, Rmsprop};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("{op}: non-finite gradient for parameter #{param}")]
    NonFiniteGradient { op: &'static str, param: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl TensorError {
    pub fn is_non_finite(&self) -> bool {
        matches!(self, Self::NonFinite { .. } | Self::NonFiniteGradient { .. })
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Self::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Self::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }
}

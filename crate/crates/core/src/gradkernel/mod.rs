//! A small reverse-mode differentiable kernel.
//!
//! Values live on a [`Tape`]; every op appends a node and records how to push
//! gradients back to its inputs. Training runs in `f32`, gradient checking in
//! `f64` through the same generic code.

mod adam;
mod gradcheck;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use gradcheck::{compare_gradients, grad_check, ElementCheck, GradCheckOptions, GradCheckReport};
pub use params::{Init, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("index error in {op}: index {index} out of range 0..{bound}")]
    Index { op: &'static str, index: usize, bound: usize },
    #[error("tape state error: {0}")]
    State(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> KernelError {
    KernelError::Shape { op, detail: detail.into() }
}

//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records each forward operation together with whatever it needs
//! for the backward sweep. Only the operations the recurrent cells and losses
//! use are provided; there is no broadcasting beyond the bias add in
//! [`Tape::affine`].

mod check;
mod kernels;
mod tape;
mod tensor;

pub use check::{finite_diff_check, relative_error, GradReport, DEFAULT_STEP};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

/// Norm floor used when normalising head directions.
pub const LP_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("target {target} out of range for {classes} classes (row {row})")]
    Index { row: usize, target: usize, classes: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("objective is not finite when perturbing {name}[{index}]")]
    NonFinite { name: String, index: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

//! Dense `f64` tensors and a reverse-mode differentiation tape.
//!
//! Every learnable component in the workspace is assembled from the ops on
//! [`Tape`]. Values live in row-major flat storage; there is no implicit
//! broadcasting apart from bias addition and scalar scaling, so a shape bug
//! surfaces as a [`TensorError::ShapeMismatch`] instead of silently
//! stretching an operand.

mod error;
mod gemm;
pub mod gradcheck;
mod optim;
mod param;
mod tape;
mod tensor;

pub use error::TensorError;
pub use gradcheck::{grad_check, grad_check_params, max_relative_error};
pub use optim::AdamW;
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-9;

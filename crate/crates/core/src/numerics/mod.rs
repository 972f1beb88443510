//! Dense tensors, forward kernels and reverse-mode differentiation.

pub mod container;
mod error;
pub mod gradcheck;
pub mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use error::{NumericsError, Result};
pub use scalar::{DType, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

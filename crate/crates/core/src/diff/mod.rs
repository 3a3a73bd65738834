//! Dense arrays and a reverse-mode differentiation tape.
//!
//! Every forward op validates shapes, records itself on the [`Tape`] and
//! rejects non-finite results, so an overflow surfaces as
//! [`DiffError::NonFinite`] instead of a NaN travelling into the optimizer.
//!
//! ```
//! use susl_core::diff::{Array, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Array::vector(vec![1.0, 2.0, 3.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod array;
pub(crate) mod kernels;
mod tape;

pub use array::Array;
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{0}")]
    InvalidArgument(String),
}

/// Output length of a strided convolution.
pub fn conv_output_len(length: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (length + 2 * padding - kernel) / stride + 1
}

/// Output length of a transposed convolution.
pub fn conv_transpose_output_len(
    length: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> usize {
    (length - 1) * stride + kernel + output_padding - 2 * padding
}

//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Values are recorded on a [`Tape`] as operations execute. A single call
//! to [`Tape::backward`] then walks the records in reverse and leaves a
//! gradient on every value that requires one.
//!
//! ```
//! use diffcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.square(x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap().item(), 6.0);
//! ```
//!
//! The operator set is deliberately small: dense matmul, a fully-connected
//! `affine` layer, same-padded `conv1d`, elementwise arithmetic with scalar
//! broadcasting, clamping, sum/mean reductions, and concat/slice/reshape.

mod error;
mod kernels;
mod tape;
mod tensor;

#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use error::{Error, Result};
pub use tape::{Axis, Binary, Reduce, Tape, Unary, Var};
pub use tensor::Tensor;

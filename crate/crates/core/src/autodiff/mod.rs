//! Reverse-mode automatic differentiation over dense real matrices.
//!
//! Every forward primitive appends a node to a [`Tape`]; [`Tape::backward`]
//! walks the nodes in reverse insertion order exactly once. Values are
//! `f64` throughout and every primitive rejects non-finite output.
//!
//! ```
//! use hpe_core::autodiff::Tape;
//! use hpe_core::Matrix;
//!
//! let tape = Tape::new();
//! let x = tape.param(Matrix::scalar(3.0));
//! let y = x.square().unwrap().sum().unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).data(), &[6.0]);
//! ```

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::grad_check;
pub use tape::{Gradients, Tape, Tensor};

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

//! Reverse-mode automatic differentiation over dense row-major `f64` arrays.
//!
//! A [`Tensor`] is an immutable array plus the rule that produced it. Calling
//! [`Tensor::backward`] on a scalar walks the recorded graph in reverse creation
//! order and leaves `d(loss)/d(t)` on every tensor that asked for a gradient.
//!
//! ```
//! use mimnet_tensor::Tensor;
//!
//! let x = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
//! let loss = x.mul(&x).unwrap().sum();
//! loss.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
//! ```

mod error;
pub mod gradcheck;
mod ops;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, relative_error};
pub use ops::{sigmoid, softplus};
pub use tensor::{BackwardCtx, Tensor};


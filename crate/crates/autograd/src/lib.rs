//! Reverse-mode automatic differentiation over dynamically shaped `f64`
//! arrays, with the layers and optimizers needed to train small
//! convolutional networks on a CPU.
//!
//! Graphs are recorded eagerly: every operation on a [`Var`] evaluates
//! immediately and remembers its parents. [`Var::backward`] walks the
//! recorded graph once and returns the [`Gradients`] of every leaf.

mod conv;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod optim;
mod param;
mod var;

pub use conv::{conv2d, Conv2dSpec};
pub use ops::cross_entropy;
pub use param::{Param, ParamId};
pub use var::{grad_enabled, no_grad, Backward, Gradients, NoGradGuard, Var};

pub type Tensor = ndarray::ArrayD<f64>;

/// Builds a tensor from a shape and row-major data.
pub fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::from_shape_vec(ndarray::IxDyn(shape), data).expect("data length must match shape")
}

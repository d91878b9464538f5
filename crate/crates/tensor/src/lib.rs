//! Reverse-mode automatic differentiation over dense n-dimensional arrays.
//!
//! Every operation records itself into the graph of its output when at least
//! one input requires a gradient and recording is enabled (see [`no_grad`]).
//! [`backward`] walks the recorded operations in exact reverse execution
//! order, accumulates gradients into the leaf tensors and then releases the
//! graph.
//!
//! The element type is a type parameter: `f64` is used for gradient checks and
//! reproducibility runs, `f32` for training throughput.

mod autograd;
mod element;
mod error;
pub mod gradcheck;
mod linalg;
pub mod ops;
pub mod optim;
mod param;
mod tensor;

pub use autograd::{backward, Tape};
pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use linalg::matmul;
pub use ops::conv::{Conv1dOpts, Conv2dOpts, LvcOpts};
pub use ops::{reflect_index, PadMode};
pub use param::{Buffer, Module, ParamGroup, Parameter};
pub use tensor::{is_grad_enabled, no_grad, BackwardOp, Tensor};

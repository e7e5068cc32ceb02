//! Dense f64 tensors with a dynamic reverse-mode tape.
//!
//! Every op records its inputs when one of them is trainable, so the graph
//! is rebuilt on each forward pass. [`Tensor::backward`] walks that graph
//! once from a scalar loss and accumulates into the trainable leaves.
//! [`adam_step`] consumes those gradients and clears them.

mod adam;
mod backward;
mod conv;
mod error;
mod gradcheck;
mod linalg;
mod ops;
mod tensor;

pub use adam::{adam_step, AdamState, Moments};
pub use error::{Result, TensorError};
pub use gradcheck::finite_diff_check;
pub use ops::{sigmoid, softplus, CustomOp, Unary, LEAKY_SLOPE};
pub use tensor::{is_grad_enabled, no_grad, Tensor};

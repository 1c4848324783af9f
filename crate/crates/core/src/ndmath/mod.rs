//! Dense tensors, reverse-mode autodiff, MLPs, Adam and loss primitives.

mod adam;
pub mod checkpoint;
mod loss;
mod mlp;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{huber, mse};
pub use mlp::{hard_copy, mlp_forward, mlp_forward_tape, Activation, ParamSet};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

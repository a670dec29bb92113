//! Dense tensors, reverse-mode differentiation and the optimisation
//! utilities shared by every training loop.

pub mod checkpoint;
pub mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use optim::{clip_grad_norm, Adam, CosineSchedule, EarlyStopper, StopDecision};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

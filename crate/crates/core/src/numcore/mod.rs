//! Dense `f64` tensors, reverse-mode differentiation, Adam and checkpoints.

pub mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use params::{AdamConfig, AdamState, ParameterStore};
pub use tape::{combination_weights, AttentionMask, Gradients, Tape, Var};
pub use tensor::{argmax, matmul_into, Tensor};

//! Dense tensors, tape-based reverse-mode differentiation, finite-difference
//! checking and the Adam optimizer.

mod adam;
mod backend;
mod checkpoint;
pub mod gradcheck;
mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use backend::{Backend, Eager};
pub use checkpoint::{NamedTensor, TensorCheckpoint, CHECKPOINT_VERSION};
pub use gradcheck::{Differentiable, GradCheckOptions, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

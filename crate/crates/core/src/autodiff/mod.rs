//! Dense tensors, a reverse-mode tape and the Adam optimizer.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{accumulate, scale_all, ParamSet};
pub use tape::{softmax_slice, Gradients, ParamId, Tape, Var};
pub use tensor::Tensor;

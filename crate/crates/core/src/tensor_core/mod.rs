//! Dense tensors, tape-based reverse-mode gradients and Adam.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use layers::Linear;
pub use params::{AdamConfig, ParamStore};
pub use rng::RngStreams;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

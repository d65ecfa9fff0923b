//! Cross-domain recommendation by diffusion-based embedding transfer.
//!
//! A conditional score network learns to generate a user's target-domain
//! embedding from noise, guided by the user's source-domain embedding. Fast
//! ODE sampling produces the transferred embedding, and a linear alignment
//! layer trained with mapping and rating losses turns it into predictions.

pub mod base_models;
pub mod data;
pub mod diffusion;
pub mod alignment;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod samplers;
pub mod tensor_core;

pub use error::{Error, Result};

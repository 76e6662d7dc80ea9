//! Operator learning with neural function encoders.

pub mod analysis;
pub mod autodiff;
pub mod baselines;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod datasets;
pub mod linalg;
pub mod operators;
pub mod sample;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

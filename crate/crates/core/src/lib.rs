//! Noise-sensitivity training-data pruning with adversarial robustness evaluation.

pub mod adversarial;
pub mod autodiff;
pub mod cli;
pub mod container;
pub mod data;
pub mod error;
pub mod kernels;
pub mod loss;
pub mod nn;
pub mod optim;
pub mod scoring;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};

//! Train small convolutional image classifiers, attack them with FGSM and BIM,
//! and analyse which classes adversarial examples land in.
//!
//! The pipeline is
//!
//! 1. [`data`]: load a class-per-folder PPM tree or generate the synthetic benchmark,
//! 2. [`model`] + [`train`]: build a plain CNN, mini-Inception or mini-ResNet and train it,
//! 3. [`attack`]: run FGSM/BIM campaigns with the confidence-gated success rule,
//! 4. [`analysis`]: embed penultimate features (PCA, exact t-SNE), compute class centers,
//!    attack selectivity and misclassification-distribution statistics,
//! 5. [`cli`]: the `perturbench` subcommands and their deterministic reports.

pub mod analysis;
pub mod attack;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Residual 1-D convolutional ECG models with tabular fusion, binary and
//! multi-task logistic regression (MTLR) survival heads, layer-freezing
//! transfer learning, and the evaluation metrics used to compare them.
//!
//! Module map:
//!
//! - [`nn`]: layer kernels with exact backward passes
//! - [`model`]: ECG preprocessing and the three model variants
//! - [`mtlr`]: time grids, label encoding, likelihood, survival curves
//! - [`training`]: Adam, plateau schedule, transfer surgery, checkpoints
//! - [`metrics`]: classification and survival metrics, bootstrap CIs
//! - [`synth`]: synthetic cohorts with planted signal

pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod mtlr;
pub mod nn;
pub mod synth;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{CheckpointError, Error, Result};
pub use tensor::Tensor;

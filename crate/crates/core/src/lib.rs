//! Chest-CT COVID screening with a pyramid vision transformer, built on a
//! small self-contained f32 tensor engine with reverse-mode autodiff.
//!
//! The pipeline: PNG slice ingestion and preprocessing, normal-distribution
//! slice sampling, a four-stage pyramid transformer scoring slices, and
//! majority voting over repeated sampling rounds to classify a case.

pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod runconfig;
pub mod sampler;
pub mod tensor;
pub mod train;
pub mod voting;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! Skeleton-based exercise quality assessment.
//!
//! A dense stack of spatio-temporal graph Conv-GRU blocks extracts
//! per-frame joint features, a transformer encoder summarizes them over
//! time, and a linear readout predicts a continuous quality score. The
//! first block's joint attention is exported as per-joint feedback.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod feedback;
pub mod graph;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod sparse;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::JointGraph;
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;

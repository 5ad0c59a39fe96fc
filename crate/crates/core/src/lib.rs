//! Simulated gamma-ray count maps, small convolutional point-source
//! detectors, and the Chamfer/F1 evaluation used to compare them.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision defaults used for training.

pub mod error;
pub mod fourier;
pub mod grid;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod scalar;
pub mod skysim;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = models::ModelHandle<f64>;
pub type Model32 = models::ModelHandle<f32>;
pub type Tensor = nn::Tensor<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type ProbMap = raster::ProbMap<f64>;
pub type PointSet = metrics::PointSet<f64>;
pub type Spectrum = fourier::Spectrum<f64>;

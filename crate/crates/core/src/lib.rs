//! Fusion of sparse lidar structural-complexity footprints with wall-to-wall
//! SAR imagery.
//!
//! The crate contains a compact EfficientNetV2-style CNN with a two-channel
//! (mean, variance) head, trained with a masked Gaussian negative
//! log-likelihood; shifted-window Monte Carlo dropout ensembles for wall-to-wall
//! inference; gridding, chip sampling and a seeded synthetic world standing in
//! for real satellite data; calibration and Moran's I evaluation; occlusion
//! attribution; and frozen-head transfer learning.
//!
//! Numeric code is generic over [`Scalar`] (`f32` in production, `f64` for
//! finite-difference checks). The aliases below fix the common choices.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use network::{ArchitectureSpec, ModelState};
pub use rng::RngStream;
pub use scalar::Scalar;
pub use tensor::{Mode, Parameter, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Parameter32 = Parameter<f32>;
pub type Model32 = ModelState<f32>;
pub type Model64 = ModelState<f64>;

/// Sentinel for missing raster values.
pub const NODATA: f32 = f32::NAN;

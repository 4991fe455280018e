//! Unsupervised typeface discovery for printed glyph images.
//!
//! A mixture of learnable templates explains each glyph. The chosen template
//! is first placed by six interpretable spatial latents (rotation, offsets,
//! shears, scale) through a differentiable attention warp, then edited by a
//! convolution whose kernels come from a latent vector `z`. The inference
//! network for `z` only sees the residual left after the spatial placement,
//! which keeps `z` from absorbing shape differences between casts.
//!
//! The math is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix `f64`, which is what the command-line tool uses.

pub mod align;
pub mod checkpoint;
pub mod corpus;
pub mod editor;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod mixture;
pub mod params;
pub mod raster;
pub mod report;
pub mod scalar;
pub mod synth;
pub mod trainer;
pub mod warp;

pub use error::{Error, Result};
pub use params::{Adam, ParamSet};
pub use raster::Raster;
pub use scalar::Scalar;

pub type Image = Raster<f64>;
pub type ImageF32 = Raster<f32>;
pub type Spatial = warp::SpatialParams<f64>;
pub type SpatialF32 = warp::SpatialParams<f32>;
pub type Mixture = mixture::MixtureState<f64>;
pub type MixtureF32 = mixture::MixtureState<f32>;
pub type Lambdas = mixture::LambdaTable<f64>;
pub type LambdasF32 = mixture::LambdaTable<f32>;

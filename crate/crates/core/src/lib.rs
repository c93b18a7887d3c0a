//! Respiratory sound anomaly classification.
//!
//! The crate covers the whole pipeline, from raw stethoscope audio to the
//! challenge scores:
//!
//! - [`dsp`]: resampling, band-pass filtering, duration tiling, continuous
//!   wavelet transforms with Morse, analytic Morlet and Bump mother wavelets,
//!   log compression and bilinear resizing into fixed-size spectrograms.
//! - [`augment`]: class-balanced oversampling, random cropping and mixup.
//! - [`autodiff`]: a small reverse-mode differentiation engine with the
//!   convolution, pooling, normalisation and attention primitives the network
//!   needs.
//! - [`model`]: the inception-residual network with spatio-temporal focusing
//!   and multi-head attention pooling.
//! - [`train`]: KL-divergence training with L2 regularisation, Adam, and
//!   checkpoints.
//! - [`eval`]: task definitions and the SE/SP/AS/HS/Score metric suite.
//! - [`ingest`]: WAV and annotation loading, event segmentation, dataset
//!   manifests, run configuration and a synthetic dataset generator.

pub mod augment;
pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod train;

pub use error::{Error, Result};

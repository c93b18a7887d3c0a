//! Feature extraction: raw audio in, fixed-size log-magnitude CWT spectrograms out.

mod clip;
mod cwt;
mod filter;
mod pipeline;
mod resample;
mod spectrogram;
mod wavelet;

pub use clip::{tile_to_duration, AudioClip};
pub use cwt::{cwt, CoefficientMatrix, CwtPlan};
pub use filter::{bandpass, BandpassFilter, Biquad};
pub use pipeline::{FeatureConfig, FeatureExtractor};
pub use resample::resample;
pub use spectrogram::{log_magnitude, Spectrogram, LOG_FLOOR};
pub use wavelet::{ScaleGrid, WaveletFamily, WaveletSpec};

use serde::{Deserialize, Serialize};

use super::{bandpass, resample, tile_to_duration, AudioClip, CwtPlan, ScaleGrid, Spectrogram, WaveletSpec, LOG_FLOOR};
use crate::error::Result;

/// Everything that determines how a clip becomes a spectrogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub wavelet: WaveletSpec,
    pub target_rate: u32,
    pub band_lo: f64,
    pub band_hi: f64,
    pub duration_secs: f64,
    pub freq_bins: usize,
    pub time_frames: usize,
}

impl FeatureConfig {
    /// Event-level defaults: 10 s tiles, 128 frequency bins.
    pub fn event(wavelet: WaveletSpec, time_frames: usize) -> Self {
        Self {
            wavelet,
            target_rate: 4000,
            band_lo: 60.0,
            band_hi: 2000.0,
            duration_secs: 10.0,
            freq_bins: 128,
            time_frames,
        }
    }

    /// Recording-level defaults: 30 s tiles, 140 frequency bins.
    pub fn recording(wavelet: WaveletSpec, time_frames: usize) -> Self {
        Self { duration_secs: 30.0, freq_bins: 140, ..Self::event(wavelet, time_frames) }
    }
}

/// resample -> tile -> band-pass -> CWT -> dB -> resize.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        config.wavelet.validate()?;
        // Surface grid errors at construction rather than per clip.
        ScaleGrid::log_spaced(&config.wavelet, config.target_rate, config.band_lo, config.band_hi, config.freq_bins)?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<Spectrogram> {
        let c = &self.config;
        let clip = resample(clip, c.target_rate)?;
        let clip = tile_to_duration(&clip, c.duration_secs)?;
        let clip = bandpass(&clip, c.band_lo, c.band_hi)?;
        let grid = ScaleGrid::log_spaced(&c.wavelet, c.target_rate, c.band_lo, c.band_hi, c.freq_bins)?;
        let plan = CwtPlan::new(clip.samples(), &c.wavelet, &grid)?;
        let n = clip.len();
        let mut values = Vec::with_capacity(plan.rows() * n);
        for i in 0..plan.rows() {
            values.extend(plan.row(i).iter().map(|z| (20.0 * (z.norm() + LOG_FLOOR).log10()) as f32));
        }
        Spectrogram::new(plan.rows(), n, values)?.resize(c.freq_bins, c.time_frames)
    }
}

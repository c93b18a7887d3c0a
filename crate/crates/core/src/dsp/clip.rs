use crate::error::{Error, Result};

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("audio clip has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; clips are nonempty by construction.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Repeats the clip cyclically (or truncates it) to exactly
/// `round(target_seconds * sample_rate)` samples.
pub fn tile_to_duration(clip: &AudioClip, target_seconds: f64) -> Result<AudioClip> {
    if !(target_seconds > 0.0) || !target_seconds.is_finite() {
        return Err(Error::InvalidInput(format!("target duration must be positive, got {target_seconds}")));
    }
    let target = (target_seconds * clip.sample_rate as f64).round() as usize;
    if target == 0 {
        return Err(Error::InvalidInput("target duration rounds to zero samples".into()));
    }
    let src = clip.samples();
    let samples = src.iter().copied().cycle().take(target).collect();
    AudioClip::new(samples, clip.sample_rate)
}

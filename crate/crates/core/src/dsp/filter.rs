use std::f64::consts::PI;

use super::AudioClip;
use crate::error::{Error, Result};

/// Quality factors of the two second-order sections of a 4th-order Butterworth.
const BUTTERWORTH4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_6];

/// Direct-form II transposed second-order section, normalised so `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn from_raw(b: [f64; 3], a: [f64; 3]) -> Self {
        Self { b0: b[0] / a[0], b1: b[1] / a[0], b2: b[2] / a[0], a1: a[1] / a[0], a2: a[2] / a[0] }
    }

    pub fn lowpass(sample_rate: f64, freq: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * freq / sample_rate;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        Self::from_raw([(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0], [1.0 + alpha, -2.0 * c, 1.0 - alpha])
    }

    pub fn highpass(sample_rate: f64, freq: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * freq / sample_rate;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        Self::from_raw([(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0], [1.0 + alpha, -2.0 * c, 1.0 - alpha])
    }

    pub fn process(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let (mut z1, mut z2) = (0.0, 0.0);
        for &x in input {
            let y = self.b0 * x + z1;
            z1 = self.b1 * x - self.a1 * y + z2;
            z2 = self.b2 * x - self.a2 * y;
            out.push(y);
        }
    }

    /// Magnitude of the transfer function at `freq` Hz.
    pub fn magnitude(&self, sample_rate: f64, freq: f64) -> f64 {
        let w = 2.0 * PI * freq / sample_rate;
        let z1 = num_complex::Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b0 + self.b1 * z1 + self.b2 * z2;
        let den = 1.0 + self.a1 * z1 + self.a2 * z2;
        (num / den).norm()
    }
}

/// 4th-order Butterworth high-pass at `lo` cascaded with a 4th-order
/// Butterworth low-pass at `hi`. The low-pass half is dropped when `hi` sits
/// on the Nyquist frequency, where it would pass everything anyway.
#[derive(Debug, Clone)]
pub struct BandpassFilter {
    sample_rate: f64,
    sections: Vec<Biquad>,
}

impl BandpassFilter {
    pub fn design(sample_rate: u32, lo: f64, hi: f64) -> Result<Self> {
        let fs = sample_rate as f64;
        let nyquist = fs / 2.0;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::InvalidInput(format!("band edges must satisfy 0 < lo < hi, got {lo}..{hi}")));
        }
        if hi > nyquist {
            return Err(Error::InvalidInput(format!(
                "upper band edge {hi} Hz exceeds the Nyquist frequency {nyquist} Hz"
            )));
        }
        let mut sections: Vec<Biquad> = BUTTERWORTH4_Q.iter().map(|&q| Biquad::highpass(fs, lo, q)).collect();
        if hi < nyquist * (1.0 - 1e-9) {
            sections.extend(BUTTERWORTH4_Q.iter().map(|&q| Biquad::lowpass(fs, hi, q)));
        }
        Ok(Self { sample_rate: fs, sections })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn magnitude(&self, freq: f64) -> f64 {
        self.sections.iter().map(|s| s.magnitude(self.sample_rate, freq)).product()
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        let mut next = Vec::with_capacity(input.len());
        for s in &self.sections {
            s.process(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

/// Forward-only band-pass filtering; same length and rate as the input.
pub fn bandpass(clip: &AudioClip, lo: f64, hi: f64) -> Result<AudioClip> {
    let filter = BandpassFilter::design(clip.sample_rate(), lo, hi)?;
    AudioClip::new(filter.apply(clip.samples()), clip.sample_rate())
}

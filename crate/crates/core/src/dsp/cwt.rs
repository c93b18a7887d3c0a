use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{AudioClip, ScaleGrid, WaveletSpec};
use crate::error::{Error, Result};

/// Row-major `rows x cols` complex coefficients; row `i` belongs to scale `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CoefficientMatrix {
    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }
}

/// A prepared transform for one signal length, wavelet and scale grid.
///
/// The signal is reflection-padded to the next power of two, transformed
/// once, and each scale is obtained by multiplying with the (real) wavelet
/// response and inverting. Rows can be pulled one at a time so that long
/// recordings never need the whole complex matrix in memory.
pub struct CwtPlan {
    len: usize,
    padded: usize,
    pad_left: usize,
    wavelet: WaveletSpec,
    grid: ScaleGrid,
    inverse: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex64>,
}

impl CwtPlan {
    pub fn new(signal: &[f64], wavelet: &WaveletSpec, grid: &ScaleGrid) -> Result<Self> {
        wavelet.validate()?;
        let len = signal.len();
        if len < 2 {
            return Err(Error::InvalidInput(format!("CWT needs at least 2 samples, got {len}")));
        }
        if grid.is_empty() {
            return Err(Error::InvalidConfig("empty scale grid".into()));
        }
        let padded = len.next_power_of_two();
        for &s in grid.scales() {
            let support = wavelet.support(s);
            if support > padded as f64 {
                return Err(Error::InvalidConfig(format!(
                    "wavelet at scale {s:.3} spans {support:.0} samples, longer than the padded signal ({padded})"
                )));
            }
        }
        let pad_left = (padded - len) / 2;
        let mut spectrum: Vec<Complex64> =
            (0..padded).map(|i| Complex64::new(signal[reflect(i as i64 - pad_left as i64, len)], 0.0)).collect();
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(padded).process(&mut spectrum);
        let inverse = planner.plan_fft_inverse(padded);
        Ok(Self { len, padded, pad_left, wavelet: *wavelet, grid: grid.clone(), inverse, spectrum })
    }

    pub fn rows(&self) -> usize {
        self.grid.len()
    }

    pub fn padded_len(&self) -> usize {
        self.padded
    }

    /// Coefficients at `grid.scales()[i]`, one per input sample.
    pub fn row(&self, i: usize) -> Vec<Complex64> {
        let scale = self.grid.scales()[i];
        let m = self.padded;
        let mut buf: Vec<Complex64> = self
            .spectrum
            .iter()
            .enumerate()
            .map(|(k, x)| {
                if k == 0 || k > m / 2 {
                    Complex64::new(0.0, 0.0)
                } else {
                    let omega = 2.0 * PI * k as f64 / m as f64;
                    x * self.wavelet.freq_response(scale * omega)
                }
            })
            .collect();
        self.inverse.process(&mut buf);
        let norm = 1.0 / m as f64;
        buf[self.pad_left..self.pad_left + self.len].iter().map(|c| c * norm).collect()
    }
}

/// Whole-sample symmetric reflection of index `i` into `0..len`.
fn reflect(i: i64, len: usize) -> usize {
    let n = len as i64;
    let m = i.rem_euclid(2 * n);
    if m < n {
        m as usize
    } else {
        (2 * n - 1 - m) as usize
    }
}

/// Continuous wavelet transform of `clip` over every scale in `grid`.
pub fn cwt(clip: &AudioClip, wavelet: &WaveletSpec, grid: &ScaleGrid) -> Result<CoefficientMatrix> {
    let plan = CwtPlan::new(clip.samples(), wavelet, grid)?;
    let cols = clip.len();
    let mut data = Vec::with_capacity(plan.rows() * cols);
    for i in 0..plan.rows() {
        data.extend(plan.row(i));
    }
    Ok(CoefficientMatrix { rows: plan.rows(), cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::WaveletFamily;

    #[test]
    fn reflection_indices() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(idx, vec![2, 2, 1, 0, 0, 1, 2, 2, 1, 0, 0, 1]);
    }

    #[test]
    fn zero_signal_gives_zero_coefficients() {
        let w = WaveletSpec::new(WaveletFamily::Amor);
        let g = ScaleGrid::log_spaced(&w, 4000, 200.0, 2000.0, 6).unwrap();
        let clip = AudioClip::new(vec![0.0; 300], 4000).unwrap();
        let c = cwt(&clip, &w, &g).unwrap();
        assert_eq!((c.rows, c.cols), (6, 300));
        assert!(c.data.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn transform_is_linear() {
        let w = WaveletSpec::new(WaveletFamily::Morse);
        let g = ScaleGrid::log_spaced(&w, 4000, 100.0, 2000.0, 8).unwrap();
        let x: Vec<f64> = (0..1500).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let a = cwt(&AudioClip::new(x.clone(), 4000).unwrap(), &w, &g).unwrap();
        let b = cwt(&AudioClip::new(x.iter().map(|v| 2.0 * v).collect(), 4000).unwrap(), &w, &g).unwrap();
        for (p, q) in a.data.iter().zip(&b.data) {
            assert!((p * 2.0 - q).norm() <= 1e-12 * (1.0 + q.norm()));
        }
    }

    #[test]
    fn unit_tone_at_center_has_unit_modulus() {
        let w = WaveletSpec::new(WaveletFamily::Amor);
        let g = ScaleGrid::log_spaced(&w, 4000, 250.0, 1000.0, 3).unwrap();
        // Middle bin sits at 500 Hz.
        let x: Vec<f64> = (0..4096).map(|n| (2.0 * PI * 500.0 * n as f64 / 4000.0).cos()).collect();
        let c = cwt(&AudioClip::new(x, 4000).unwrap(), &w, &g).unwrap();
        let mid = c.row(1)[2048].norm();
        assert!((mid - 1.0).abs() < 1e-3, "{mid}");
    }

    #[test]
    fn oversized_wavelet_is_rejected() {
        let w = WaveletSpec::new(WaveletFamily::Bump);
        let g = ScaleGrid::log_spaced(&w, 4000, 60.0, 2000.0, 16).unwrap();
        let clip = AudioClip::new(vec![0.1; 64], 4000).unwrap();
        assert!(matches!(cwt(&clip, &w, &g), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn short_signal_rejected() {
        let w = WaveletSpec::new(WaveletFamily::Amor);
        let g = ScaleGrid::log_spaced(&w, 4000, 1000.0, 2000.0, 2).unwrap();
        let clip = AudioClip::new(vec![0.1], 4000).unwrap();
        assert!(matches!(cwt(&clip, &w, &g), Err(Error::InvalidInput(_))));
    }
}

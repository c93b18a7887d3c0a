use std::fs;
use std::path::Path;

use super::CoefficientMatrix;
use crate::error::{Error, Result};

/// Added to every magnitude before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

const CACHE_MAGIC: &[u8; 4] = b"LSSG";
const CACHE_VERSION: u32 = 1;
const CACHE_HEADER: usize = 16;

/// Frequency-major `freq_bins x time_frames` matrix of log-magnitudes.
/// Row 0 is the highest centre frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    freq_bins: usize,
    time_frames: usize,
    values: Vec<f32>,
}

impl Spectrogram {
    pub fn new(freq_bins: usize, time_frames: usize, values: Vec<f32>) -> Result<Self> {
        if freq_bins == 0 || time_frames == 0 {
            return Err(Error::InvalidInput("spectrogram dims must be positive".into()));
        }
        if values.len() != freq_bins * time_frames {
            return Err(Error::InvalidInput(format!(
                "{} values for a {freq_bins}x{time_frames} spectrogram",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrogram values".into()));
        }
        Ok(Self { freq_bins, time_frames, values })
    }

    pub fn constant(freq_bins: usize, time_frames: usize, value: f32) -> Self {
        Self { freq_bins, time_frames, values: vec![value; freq_bins * time_frames] }
    }

    pub fn freq_bins(&self) -> usize {
        self.freq_bins
    }

    pub fn time_frames(&self) -> usize {
        self.time_frames
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.freq_bins, self.time_frames)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, f: usize, t: usize) -> f32 {
        self.values[f * self.time_frames + t]
    }

    pub fn row(&self, f: usize) -> &[f32] {
        &self.values[f * self.time_frames..(f + 1) * self.time_frames]
    }

    /// Contiguous `rows x cols` window starting at `(f0, t0)`.
    pub fn window(&self, f0: usize, t0: usize, rows: usize, cols: usize) -> Result<Spectrogram> {
        if rows == 0 || cols == 0 || f0 + rows > self.freq_bins || t0 + cols > self.time_frames {
            return Err(Error::InvalidConfig(format!(
                "window {rows}x{cols} at ({f0},{t0}) outside {}x{}",
                self.freq_bins, self.time_frames
            )));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for f in f0..f0 + rows {
            values.extend_from_slice(&self.row(f)[t0..t0 + cols]);
        }
        Ok(Spectrogram { freq_bins: rows, time_frames: cols, values })
    }

    /// Bilinear resampling onto an `f_out x t_out` grid whose corners coincide
    /// with the source corners.
    pub fn resize(&self, f_out: usize, t_out: usize) -> Result<Spectrogram> {
        if f_out < 2 || t_out < 2 {
            return Err(Error::InvalidConfig(format!("resize target {f_out}x{t_out} must be at least 2x2")));
        }
        if (f_out, t_out) == self.dims() {
            return Ok(self.clone());
        }
        let rows = axis_weights(self.freq_bins, f_out);
        let cols = axis_weights(self.time_frames, t_out);
        let mut values = Vec::with_capacity(f_out * t_out);
        for &(r0, r1, wr) in &rows {
            let (a, b) = (self.row(r0), self.row(r1));
            for &(c0, c1, wc) in &cols {
                let top = a[c0] as f64 * (1.0 - wc) + a[c1] as f64 * wc;
                let bot = b[c0] as f64 * (1.0 - wc) + b[c1] as f64 * wc;
                values.push((top * (1.0 - wr) + bot * wr) as f32);
            }
        }
        Ok(Spectrogram { freq_bins: f_out, time_frames: t_out, values })
    }

    pub fn to_cache_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CACHE_HEADER + 4 * self.values.len());
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.freq_bins as u32).to_le_bytes());
        out.extend_from_slice(&(self.time_frames as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_cache_bytes(bytes: &[u8]) -> Result<Spectrogram> {
        if bytes.len() < CACHE_HEADER || &bytes[..4] != CACHE_MAGIC {
            return Err(Error::Format("not a spectrogram cache file (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != CACHE_VERSION {
            return Err(Error::Format(format!("unsupported spectrogram cache version {version}")));
        }
        let (f, t) = (word(8) as usize, word(12) as usize);
        let expected = CACHE_HEADER + 4 * f * t;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "spectrogram cache holds {} bytes, expected {expected} for {f}x{t}",
                bytes.len()
            )));
        }
        let values = bytes[CACHE_HEADER..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Spectrogram::new(f, t, values).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes through a temporary file and renames it into place.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        crate::ingest::write_atomic(path, &self.to_cache_bytes())
    }

    pub fn read_cache(path: &Path) -> Result<Spectrogram> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Spectrogram::from_cache_bytes(&bytes)
    }
}

/// For each output index: lower source index, upper source index, weight of the upper one.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            if n_in == 1 {
                return (0, 0, 0.0);
            }
            let pos = (i * (n_in - 1)) as f64 / (n_out - 1) as f64;
            let lo = (pos.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// `20 log10(|c| + LOG_FLOOR)` for every coefficient.
pub fn log_magnitude(coeffs: &CoefficientMatrix) -> Result<Spectrogram> {
    let values = coeffs.data.iter().map(|c| (20.0 * (c.norm() + LOG_FLOOR).log10()) as f32).collect();
    Spectrogram::new(coeffs.rows, coeffs.cols, values)
}

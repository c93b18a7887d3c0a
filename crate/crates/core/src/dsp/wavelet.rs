use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    Morse,
    Amor,
    Bump,
}

impl fmt::Display for WaveletFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WaveletFamily::Morse => "morse",
            WaveletFamily::Amor => "amor",
            WaveletFamily::Bump => "bump",
        })
    }
}

impl FromStr for WaveletFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "morse" => Ok(WaveletFamily::Morse),
            "amor" => Ok(WaveletFamily::Amor),
            "bump" => Ok(WaveletFamily::Bump),
            other => Err(Error::InvalidConfig(format!("unknown wavelet '{other}' (expected amor, bump or morse)"))),
        }
    }
}

/// Analytic mother wavelet, defined by its real frequency response on
/// `omega > 0` (rad/sample at scale 1). All three families peak at 2, so a
/// unit sinusoid at the centre frequency produces coefficients of modulus 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveletSpec {
    pub family: WaveletFamily,
    pub morse_gamma: f64,
    pub morse_beta: f64,
    pub amor_center_freq: f64,
    pub bump_mu: f64,
    pub bump_sigma: f64,
}

impl Default for WaveletSpec {
    fn default() -> Self {
        Self {
            family: WaveletFamily::Morse,
            morse_gamma: 3.0,
            morse_beta: 20.0,
            amor_center_freq: 6.0,
            bump_mu: 5.0,
            bump_sigma: 0.6,
        }
    }
}

impl WaveletSpec {
    pub fn new(family: WaveletFamily) -> Self {
        Self { family, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.family {
            WaveletFamily::Morse => self.morse_gamma > 0.0 && self.morse_beta > 0.0,
            WaveletFamily::Amor => self.amor_center_freq > 0.0,
            WaveletFamily::Bump => self.bump_sigma > 0.0 && self.bump_sigma < self.bump_mu,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid wavelet parameters {self:?}")))
        }
    }

    /// Peak frequency of the mother wavelet, rad/sample.
    pub fn center_frequency(&self) -> f64 {
        match self.family {
            WaveletFamily::Morse => (self.morse_beta / self.morse_gamma).powf(1.0 / self.morse_gamma),
            WaveletFamily::Amor => self.amor_center_freq,
            WaveletFamily::Bump => self.bump_mu,
        }
    }

    pub fn freq_response(&self, omega: f64) -> f64 {
        if omega <= 0.0 {
            return 0.0;
        }
        match self.family {
            WaveletFamily::Morse => {
                let (g, b) = (self.morse_gamma, self.morse_beta);
                let log_a = 2f64.ln() + (b / g) * (1.0 + g.ln() - b.ln());
                (log_a + b * omega.ln() - omega.powf(g)).exp()
            }
            WaveletFamily::Amor => {
                let d = omega - self.amor_center_freq;
                2.0 * (-0.5 * d * d).exp()
            }
            WaveletFamily::Bump => {
                let u = (omega - self.bump_mu) / self.bump_sigma;
                if u.abs() < 1.0 {
                    2.0 * (1.0 - 1.0 / (1.0 - u * u)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Standard deviation of `|Psi|^2` over frequency, rad/sample.
    pub fn bandwidth(&self) -> f64 {
        let top = self.center_frequency() * 6.0 + 20.0;
        let steps = 40_000;
        let dw = top / steps as f64;
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for k in 1..steps {
            let w = k as f64 * dw;
            let p = self.freq_response(w).powi(2);
            m0 += p;
            m1 += p * w;
            m2 += p * w * w;
        }
        let mean = m1 / m0;
        (m2 / m0 - mean * mean).max(0.0).sqrt()
    }

    /// Time-domain extent (about +-4 standard deviations) of the wavelet at
    /// `scale`, in samples.
    pub fn support(&self, scale: f64) -> f64 {
        8.0 * scale / self.bandwidth()
    }
}

/// Wavelet scales with their centre frequencies, highest frequency first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleGrid {
    scales: Vec<f64>,
    center_freqs: Vec<f64>,
}

impl ScaleGrid {
    /// `bins` centre frequencies spaced logarithmically from `f_hi` down to
    /// `f_lo` Hz.
    pub fn log_spaced(wavelet: &WaveletSpec, sample_rate: u32, f_lo: f64, f_hi: f64, bins: usize) -> Result<Self> {
        wavelet.validate()?;
        let fs = sample_rate as f64;
        if bins == 0 {
            return Err(Error::InvalidConfig("scale grid needs at least one bin".into()));
        }
        if !(f_lo > 0.0 && f_lo < f_hi && f_hi <= fs / 2.0) {
            return Err(Error::InvalidConfig(format!("scale grid band {f_lo}..{f_hi} Hz invalid at {sample_rate} Hz")));
        }
        let wc = wavelet.center_frequency();
        let center_freqs: Vec<f64> = if bins == 1 {
            vec![f_hi]
        } else {
            let ratio = f_lo / f_hi;
            (0..bins)
                .map(|i| if i == bins - 1 { f_lo } else { f_hi * ratio.powf(i as f64 / (bins - 1) as f64) })
                .collect()
        };
        let scales = center_freqs.iter().map(|f| wc * fs / (2.0 * PI * f)).collect();
        Ok(Self { scales, center_freqs })
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn center_freqs(&self) -> &[f64] {
        &self.center_freqs
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FAMILIES: [WaveletFamily; 3] = [WaveletFamily::Morse, WaveletFamily::Amor, WaveletFamily::Bump];

    #[test]
    fn responses_peak_at_two_at_center() {
        for fam in FAMILIES {
            let w = WaveletSpec::new(fam);
            let wc = w.center_frequency();
            assert!((w.freq_response(wc) - 2.0).abs() < 1e-12, "{fam}");
            assert!(w.freq_response(wc * 0.9) < 2.0);
            assert!(w.freq_response(wc * 1.1) < 2.0);
            assert_eq!(w.freq_response(-wc), 0.0);
        }
    }

    #[test]
    fn morse_center_frequency() {
        let w = WaveletSpec::new(WaveletFamily::Morse);
        assert!((w.center_frequency() - (20.0f64 / 3.0).cbrt()).abs() < 1e-12);
    }

    #[test]
    fn bump_is_compact() {
        let w = WaveletSpec::new(WaveletFamily::Bump);
        assert_eq!(w.freq_response(4.4), 0.0);
        assert_eq!(w.freq_response(5.6), 0.0);
        assert!(w.freq_response(5.59) > 0.0);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut w = WaveletSpec::new(WaveletFamily::Bump);
        w.bump_sigma = 6.0;
        assert!(w.validate().is_err());
        let mut m = WaveletSpec::new(WaveletFamily::Morse);
        m.morse_gamma = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn grid_is_monotone_inside_band() {
        for fam in FAMILIES {
            for bins in [128, 140] {
                let g = ScaleGrid::log_spaced(&WaveletSpec::new(fam), 4000, 60.0, 2000.0, bins).unwrap();
                assert_eq!(g.len(), bins);
                assert_eq!(g.center_freqs()[0], 2000.0);
                assert_eq!(g.center_freqs()[bins - 1], 60.0);
                for w in g.center_freqs().windows(2) {
                    assert!(w[1] < w[0]);
                }
                for w in g.scales().windows(2) {
                    assert!(w[1] > w[0]);
                }
            }
        }
    }

    #[test]
    fn family_parses() {
        assert_eq!("Bump".parse::<WaveletFamily>().unwrap(), WaveletFamily::Bump);
        assert!("haar".parse::<WaveletFamily>().is_err());
    }
}

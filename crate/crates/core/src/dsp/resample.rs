use super::AudioClip;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel kept on each side of the centre tap.
const HALF_ZERO_CROSSINGS: usize = 16;
const KAISER_BETA: f64 = 8.0;
/// Fraction of the output Nyquist band kept when downsampling.
const ROLLOFF: f64 = 0.95;

/// Rational-ratio resampling with a Kaiser-windowed sinc polyphase filter.
///
/// The output holds `round(len * target / source)` samples. When the rate
/// drops, the kernel cutoff moves below the new Nyquist frequency so the
/// filter doubles as the anti-aliasing stage.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidInput("target sample rate must be positive".into()));
    }
    let source_rate = clip.sample_rate();
    if source_rate == target_rate {
        return Ok(clip.clone());
    }
    let g = gcd(source_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = source_rate as u64 / g;

    let cutoff = if up < down { ROLLOFF * up as f64 / down as f64 } else { 1.0 };
    let half_width = HALF_ZERO_CROSSINGS as f64 / cutoff;
    let reach = half_width.ceil() as i64;
    let bank = PolyphaseBank::new(up as usize, reach, half_width, cutoff);

    let input = clip.samples();
    let n_in = input.len() as u64;
    let n_out = ((n_in * up + down / 2) / down).max(1) as usize;

    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out as u64 {
        let num = j * down;
        let base = (num / up) as i64;
        let phase = (num % up) as usize;
        let taps = bank.phase(phase);
        let mut acc = 0.0;
        let first = base - reach + 1;
        for (t, &h) in taps.iter().enumerate() {
            let n = first + t as i64;
            if n >= 0 && (n as usize) < input.len() {
                acc += h * input[n as usize];
            }
        }
        out.push(acc);
    }
    AudioClip::new(out, target_rate)
}

struct PolyphaseBank {
    taps_per_phase: usize,
    coeffs: Vec<f64>,
}

impl PolyphaseBank {
    fn new(phases: usize, reach: i64, half_width: f64, cutoff: f64) -> Self {
        let taps_per_phase = (2 * reach) as usize;
        let mut coeffs = Vec::with_capacity(phases * taps_per_phase);
        let i0_beta = bessel_i0(KAISER_BETA);
        for p in 0..phases {
            let frac = p as f64 / phases as f64;
            let start = coeffs.len();
            for t in 0..taps_per_phase {
                // Distance from the output instant back to input sample `base - reach + 1 + t`.
                let d = frac + (reach - 1 - t as i64) as f64;
                let w = if d.abs() < half_width {
                    let r = d / half_width;
                    bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
                } else {
                    0.0
                };
                coeffs.push(cutoff * sinc(cutoff * d) * w);
            }
            // Unit DC gain per phase.
            let sum: f64 = coeffs[start..].iter().sum();
            for c in &mut coeffs[start..] {
                *c /= sum;
            }
        }
        Self { taps_per_phase, coeffs }
    }

    fn phase(&self, p: usize) -> &[f64] {
        &self.coeffs[p * self.taps_per_phase..(p + 1) * self.taps_per_phase]
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

//! Training-time augmentation: class-balanced oversampling, random crops and
//! mixup, composed by [`make_batch`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-6;

/// A spectrogram with a soft label (probability vector over task classes).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSpectrogram {
    pub spec: Spectrogram,
    pub label: Vec<f64>,
}

impl LabeledSpectrogram {
    pub fn new(spec: Spectrogram, label: Vec<f64>) -> Result<Self> {
        check_simplex(&label)?;
        Ok(Self { spec, label })
    }

    pub fn one_hot(spec: Spectrogram, class: usize, n_classes: usize) -> Result<Self> {
        if class >= n_classes {
            return Err(Error::InvalidInput(format!("class {class} out of range for {n_classes} classes")));
        }
        let mut label = vec![0.0; n_classes];
        label[class] = 1.0;
        Ok(Self { spec, label })
    }
}

fn check_simplex(label: &[f64]) -> Result<()> {
    let sum: f64 = label.iter().sum();
    if label.is_empty() || label.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidInput(format!("label {label:?} is not a probability vector")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub crop_bins: usize,
    pub mixup: bool,
    pub mixup_alpha: f64,
    pub oversample: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { crop_bins: 10, mixup: true, mixup_alpha: 0.4, oversample: true }
    }
}

impl AugmentConfig {
    pub fn validate(&self, dims: (usize, usize)) -> Result<()> {
        if self.crop_bins >= dims.0.min(dims.1) {
            return Err(Error::InvalidConfig(format!(
                "crop of {} bins does not fit a {}x{} spectrogram",
                self.crop_bins, dims.0, dims.1
            )));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::InvalidConfig("mixup alpha must be positive".into()));
        }
        Ok(())
    }
}

/// Infinite stream of batches holding exactly `batch_size / C` indices of
/// every class, drawn uniformly with replacement within each class.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    by_class: Vec<Vec<usize>>,
    per_class: usize,
    rng: ChaCha8Rng,
}

impl BalancedSampler {
    pub fn new(class_of: &[usize], n_classes: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n_classes == 0 || batch_size == 0 || batch_size % n_classes != 0 {
            return Err(Error::InvalidConfig(format!(
                "batch size {batch_size} is not a positive multiple of the class count {n_classes}"
            )));
        }
        let mut by_class = vec![Vec::new(); n_classes];
        for (i, &c) in class_of.iter().enumerate() {
            let slot = by_class
                .get_mut(c)
                .ok_or_else(|| Error::InvalidConfig(format!("sample {i} has class {c} outside 0..{n_classes}")))?;
            slot.push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::InvalidConfig(format!("class {c} has no samples")));
        }
        Ok(Self { by_class, per_class: batch_size / n_classes, rng: ChaCha8Rng::seed_from_u64(seed) })
    }
}

impl Iterator for BalancedSampler {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let mut batch = Vec::with_capacity(self.per_class * self.by_class.len());
        for members in &self.by_class {
            for _ in 0..self.per_class {
                batch.push(members[self.rng.random_range(0..members.len())]);
            }
        }
        batch.shuffle(&mut self.rng);
        Some(batch)
    }
}

/// Removes `crop_bins` rows and columns, keeping a uniformly placed window.
pub fn random_crop<R: Rng + ?Sized>(spec: &Spectrogram, crop_bins: usize, rng: &mut R) -> Result<Spectrogram> {
    check_crop(spec, crop_bins)?;
    let df = rng.random_range(0..=crop_bins);
    let dt = rng.random_range(0..=crop_bins);
    spec.window(df, dt, spec.freq_bins() - crop_bins, spec.time_frames() - crop_bins)
}

/// Deterministic counterpart of [`random_crop`] used at evaluation time.
pub fn center_crop(spec: &Spectrogram, crop_bins: usize) -> Result<Spectrogram> {
    check_crop(spec, crop_bins)?;
    let off = crop_bins / 2;
    spec.window(off, off, spec.freq_bins() - crop_bins, spec.time_frames() - crop_bins)
}

fn check_crop(spec: &Spectrogram, crop_bins: usize) -> Result<()> {
    if crop_bins >= spec.freq_bins() || crop_bins >= spec.time_frames() {
        return Err(Error::InvalidConfig(format!(
            "cannot crop {crop_bins} bins from a {}x{} spectrogram",
            spec.freq_bins(),
            spec.time_frames()
        )));
    }
    Ok(())
}

/// Draws `lambda ~ Beta(alpha, alpha)` and mixes the pair with it.
pub fn mixup<R: Rng + ?Sized>(
    a: &LabeledSpectrogram,
    b: &LabeledSpectrogram,
    alpha: f64,
    rng: &mut R,
) -> Result<LabeledSpectrogram> {
    let lambda = sample_lambda(alpha, rng)?;
    mixup_with_lambda(a, b, lambda)
}

pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::InvalidConfig(format!("mixup alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// `lambda * a + (1 - lambda) * b` for both spectrogram and label.
pub fn mixup_with_lambda(a: &LabeledSpectrogram, b: &LabeledSpectrogram, lambda: f64) -> Result<LabeledSpectrogram> {
    if a.spec.dims() != b.spec.dims() || a.label.len() != b.label.len() {
        return Err(Error::InvalidInput(format!(
            "mixup pair mismatch: {:?}/{} vs {:?}/{}",
            a.spec.dims(),
            a.label.len(),
            b.spec.dims(),
            b.label.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("mixup lambda {lambda} outside [0, 1]")));
    }
    let (fa, fb) = (lambda as f32, (1.0 - lambda) as f32);
    let values = a
        .spec
        .values()
        .iter()
        .zip(b.spec.values())
        .map(|(&x, &y)| if lambda == 1.0 { x } else { fa * x + fb * y })
        .collect();
    let label = a.label.iter().zip(&b.label).map(|(&x, &y)| lambda * x + (1.0 - lambda) * y).collect();
    let (f, t) = a.spec.dims();
    Ok(LabeledSpectrogram { spec: Spectrogram::new(f, t, values)?, label })
}

/// A stacked `N x 1 x F x T` input batch with its `N x C` soft labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub freq: usize,
    pub time: usize,
    pub n_classes: usize,
    pub inputs: Vec<f64>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn input_dims(&self) -> [usize; 4] {
        [self.n, 1, self.freq, self.time]
    }

    pub fn label_row(&self, i: usize) -> &[f64] {
        &self.labels[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn from_samples(samples: &[LabeledSpectrogram]) -> Result<Batch> {
        let first = samples.first().ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let (freq, time) = first.spec.dims();
        let n_classes = first.label.len();
        let mut inputs = Vec::with_capacity(samples.len() * freq * time);
        let mut labels = Vec::with_capacity(samples.len() * n_classes);
        for s in samples {
            if s.spec.dims() != (freq, time) || s.label.len() != n_classes {
                return Err(Error::InvalidInput("batch members differ in shape".into()));
            }
            inputs.extend(s.spec.values().iter().map(|&v| v as f64));
            labels.extend_from_slice(&s.label);
        }
        Ok(Batch { n: samples.len(), freq, time, n_classes, inputs, labels })
    }
}

/// Crops every selected sample and, when enabled, mixes each one with a
/// uniformly chosen other member of the same batch.
pub fn make_batch<R: Rng + ?Sized>(
    dataset: &[LabeledSpectrogram],
    indices: &[usize],
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<Batch> {
    let mut cropped = Vec::with_capacity(indices.len());
    for &i in indices {
        let item = dataset.get(i).ok_or_else(|| Error::InvalidInput(format!("batch index {i} out of range")))?;
        let spec =
            if config.crop_bins == 0 { item.spec.clone() } else { random_crop(&item.spec, config.crop_bins, rng)? };
        cropped.push(LabeledSpectrogram { spec, label: item.label.clone() });
    }
    if config.mixup && cropped.len() > 1 {
        let mut mixed = Vec::with_capacity(cropped.len());
        for i in 0..cropped.len() {
            let mut j = rng.random_range(0..cropped.len() - 1);
            if j >= i {
                j += 1;
            }
            mixed.push(mixup(&cropped[i], &cropped[j], config.mixup_alpha, rng)?);
        }
        cropped = mixed;
    }
    Batch::from_samples(&cropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(f: usize, t: usize) -> Spectrogram {
        Spectrogram::new(f, t, (0..f * t).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn balanced_batches_have_exact_counts() {
        let mut class_of = vec![0; 100];
        class_of.extend([1, 1]);
        let sampler = BalancedSampler::new(&class_of, 2, 8, 3).unwrap();
        for batch in sampler.take(50) {
            let ones = batch.iter().filter(|&&i| class_of[i] == 1).count();
            assert_eq!((batch.len(), ones), (8, 4));
        }
    }

    #[test]
    fn single_class_and_determinism() {
        let s = BalancedSampler::new(&[0, 0, 0], 1, 4, 1).unwrap();
        assert!(s.take(5).all(|b| b.len() == 4 && b.iter().all(|&i| i < 3)));
        let a: Vec<_> = BalancedSampler::new(&[0, 1, 0, 1], 2, 4, 7).unwrap().take(10).collect();
        let b: Vec<_> = BalancedSampler::new(&[0, 1, 0, 1], 2, 4, 7).unwrap().take(10).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sampler_config_errors() {
        assert!(matches!(BalancedSampler::new(&[0, 1], 2, 3, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(BalancedSampler::new(&[0, 0], 2, 4, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn crop_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = ramp(128, 512);
        assert_eq!(random_crop(&s, 10, &mut rng).unwrap().dims(), (118, 502));
        assert_eq!(random_crop(&s, 0, &mut rng).unwrap(), s);
        assert!(random_crop(&ramp(10, 40), 10, &mut rng).is_err());
        assert_eq!(center_crop(&s, 10).unwrap().get(0, 0), s.get(5, 5));
    }

    #[test]
    fn mixup_cases() {
        let a = LabeledSpectrogram::one_hot(ramp(2, 2), 0, 2).unwrap();
        let b = LabeledSpectrogram::one_hot(Spectrogram::constant(2, 2, -1.0), 1, 2).unwrap();
        assert_eq!(mixup_with_lambda(&a, &b, 1.0).unwrap(), a);
        let m = mixup_with_lambda(&a, &b, 0.3).unwrap();
        assert!((m.label[0] - 0.3).abs() < 1e-12 && (m.label[1] - 0.7).abs() < 1e-12);
        let c = LabeledSpectrogram::one_hot(ramp(2, 3), 0, 2).unwrap();
        assert!(matches!(mixup_with_lambda(&a, &c, 0.5), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn lambda_mean_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mean: f64 = (0..10000).map(|_| sample_lambda(0.4, &mut rng).unwrap()).sum::<f64>() / 10000.0;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn batch_without_augmentation_is_raw() {
        let data: Vec<_> = (0..4).map(|i| LabeledSpectrogram::one_hot(ramp(4, 5), i % 2, 2).unwrap()).collect();
        let cfg = AugmentConfig { crop_bins: 0, mixup: false, ..AugmentConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batch(&data, &[3, 0], &cfg, &mut rng).unwrap();
        assert_eq!(b.input_dims(), [2, 1, 4, 5]);
        assert_eq!(&b.inputs[..20], &ramp(4, 5).values().iter().map(|&v| v as f64).collect::<Vec<_>>()[..]);
        assert_eq!(b.label_row(0), &[0.0, 1.0]);
        assert_eq!(b.label_row(1), &[1.0, 0.0]);
    }

    #[test]
    fn oversampled_batch_is_balanced_before_mixing() {
        let data: Vec<_> =
            (0..12).map(|i| LabeledSpectrogram::one_hot(ramp(20, 20), usize::from(i >= 10), 2).unwrap()).collect();
        let class_of: Vec<usize> = (0..12).map(|i| usize::from(i >= 10)).collect();
        let mut sampler = BalancedSampler::new(&class_of, 2, 8, 5).unwrap();
        let idx = sampler.next().unwrap();
        assert_eq!(idx.iter().filter(|&&i| class_of[i] == 0).count(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = make_batch(&data, &idx, &AugmentConfig::default(), &mut rng).unwrap();
        assert_eq!(b.input_dims(), [8, 1, 10, 10]);
        for i in 0..8 {
            assert!((b.label_row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn crop_is_a_verbatim_window(f in 11usize..24, t in 11usize..24, seed in 0u64..500) {
            let s = ramp(f, t);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_crop(&s, 10, &mut rng).unwrap();
            let found = (0..=10).any(|df| (0..=10).any(|dt| {
                (0..c.freq_bins()).all(|i| (0..c.time_frames()).all(|j| c.get(i, j) == s.get(i + df, j + dt)))
            }));
            prop_assert!(found);
        }

        #[test]
        fn mixup_stays_between_inputs(seed in 0u64..500, alpha in 0.05f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = LabeledSpectrogram::new(ramp(3, 4), vec![0.2, 0.8]).unwrap();
            let b = LabeledSpectrogram::new(Spectrogram::constant(3, 4, 4.5), vec![1.0, 0.0]).unwrap();
            let m = mixup(&a, &b, alpha, &mut rng).unwrap();
            prop_assert!(m.label.iter().all(|&p| p >= 0.0));
            prop_assert!((m.label.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for ((&x, &y), &z) in a.spec.values().iter().zip(b.spec.values()).zip(m.spec.values()) {
                prop_assert!(z >= x.min(y) - 1e-5 && z <= x.max(y) + 1e-5);
            }
        }
    }
}

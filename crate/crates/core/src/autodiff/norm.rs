use super::graph::{Graph, Var};
use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const NORM_EPS: f64 = 1e-5;

/// Per-channel statistics of one training batch (variance is biased).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

impl<T: Real> BatchStats<T> {
    /// Exponential moving average update; the variance is stored unbiased.
    pub fn update_running(&self, running_mean: &mut [T], running_var: &mut [T], momentum: f64) {
        let m = T::from_f64(momentum);
        let keep = T::one() - m;
        let unbias = if self.count > 1 { T::from_f64(self.count as f64 / (self.count - 1) as f64) } else { T::one() };
        for c in 0..self.mean.len() {
            running_mean[c] = keep * running_mean[c] + m * self.mean[c];
            running_var[c] = keep * running_var[c] + m * self.var[c] * unbias;
        }
    }
}

impl<T: Real> Graph<T> {
    /// Batch normalisation over `N x C x H x W`. Training mode normalises by
    /// the batch statistics (returned for the running-average update); eval
    /// mode uses `running_mean`/`running_var`.
    pub fn batch_norm(
        &mut self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        running_mean: &[T],
        running_var: &[T],
        training: bool,
    ) -> Result<(Var<T>, Option<BatchStats<T>>)> {
        let [n, c, h, w] = x.value().dims4("batch_norm")?;
        for (name, len) in [
            ("gamma", gamma.value().numel()),
            ("beta", beta.value().numel()),
            ("running mean", running_mean.len()),
            ("running var", running_var.len()),
        ] {
            if len != c {
                return Err(Error::shape("batch_norm", format!("{name} has {len} entries for {c} channels")));
            }
        }
        let plane = h * w;
        let count = n * plane;
        let xd = x.data();
        let eps = T::from_f64(BN_EPS);
        let (mean, var) = if training {
            let inv = T::from_f64(1.0 / count as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s += xd[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().copied().sum::<T>();
                }
                let mu = s * inv;
                let mut q = T::zero();
                for b in 0..n {
                    for &v in &xd[(b * c + ch) * plane..(b * c + ch + 1) * plane] {
                        q += (v - mu) * (v - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = q * inv;
            }
            (mean, var)
        } else {
            (running_mean.to_vec(), running_var.to_vec())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gd, bd) = (gamma.data(), beta.data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                for i in r {
                    let z = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = z;
                    out[i] = gd[ch] * z + bd[ch];
                }
            }
        }
        let stats = training.then(|| BatchStats { mean: mean.clone(), var: var.clone(), count });
        let out = Tensor::new(&[n, c, h, w], out)?;
        let var = self.push(
            &[x, gamma, beta],
            out,
            Box::new(move |args, slots| {
                let dy = args.grad;
                let gd = args.inputs[1].data();
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                            sum_dy[ch] += dy[i];
                            sum_dy_xhat[ch] += dy[i] * xhat[i];
                        }
                    }
                }
                if let Some(dg) = slots[1].as_mut() {
                    dg.iter_mut().zip(&sum_dy_xhat).for_each(|(d, &s)| *d += s);
                }
                if let Some(db) = slots[2].as_mut() {
                    db.iter_mut().zip(&sum_dy).for_each(|(d, &s)| *d += s);
                }
                let Some(dx) = slots[0].as_mut() else { return };
                let m = T::from_f64(count as f64);
                for b in 0..n {
                    for ch in 0..c {
                        let scale = gd[ch] * inv_std[ch];
                        for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                            dx[i] += if training {
                                scale * (m * dy[i] - sum_dy[ch] - xhat[i] * sum_dy_xhat[ch]) / m
                            } else {
                                scale * dy[i]
                            };
                        }
                    }
                }
            }),
        );
        Ok((var, stats))
    }

    /// Normalises every row along the last axis to zero mean and unit
    /// variance (no affine part). For `N x C x F x T` input that is one row
    /// per sample, channel and frequency bin.
    pub fn instance_norm_freq(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let dims = x.dims().to_vec();
        let len = *dims.last().ok_or_else(|| Error::shape("instance_norm", "scalar input"))?;
        if len < 2 {
            return Err(Error::shape("instance_norm", format!("need at least 2 time steps, got {len}")));
        }
        let xd = x.data();
        let rows = xd.len() / len;
        let inv_len = T::from_f64(1.0 / len as f64);
        let eps = T::from_f64(NORM_EPS);
        let mut xhat = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xd[r * len..(r + 1) * len];
            let mu = row.iter().copied().sum::<T>() * inv_len;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_len;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, &v) in xhat[r * len..(r + 1) * len].iter_mut().zip(row) {
                *o = (v - mu) * is;
            }
        }
        let out = Tensor::new(&dims, xhat)?;
        Ok(self.push(
            &[x],
            out,
            Box::new(move |args, slots| {
                let Some(dx) = slots[0].as_mut() else { return };
                let xh = args.output.data();
                let m = T::from_f64(len as f64);
                for r in 0..rows {
                    let span = r * len..(r + 1) * len;
                    let dy = &args.grad[span.clone()];
                    let z = &xh[span.clone()];
                    let s: T = dy.iter().copied().sum();
                    let sz: T = dy.iter().zip(z).map(|(&a, &b)| a * b).sum();
                    for ((d, &g), &zz) in dx[span].iter_mut().zip(dy).zip(z) {
                        *d += inv_std[r] * (m * g - s - zz * sz) / m;
                    }
                }
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn training_output_is_standardised() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..3 * 2 * 4 * 5).map(|_| rng.random_range(-3.0..7.0)).collect();
        let mut g = Graph::inference();
        let x = g.constant(Tensor::new(&[3, 2, 4, 5], data).unwrap());
        let one = g.constant(Tensor::full(&[2], 1.0));
        let zero = g.constant(Tensor::zeros(&[2]));
        let (y, stats) = g.batch_norm(&x, &one, &zero, &[0.0; 2], &[1.0; 2], true).unwrap();
        assert!(stats.is_some());
        for ch in 0..2 {
            let vals: Vec<f64> =
                (0..3).flat_map(|b| y.data()[(b * 2 + ch) * 20..(b * 2 + ch + 1) * 20].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 60.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 60.0;
            assert!(mean.abs() < 1e-4 && (var - 1.0).abs() < 1e-4, "{mean} {var}");
        }
    }

    #[test]
    fn eval_mode_hand_formula() {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::new(&[1, 1, 1, 2], vec![1.0, 4.0]).unwrap());
        let gamma = g.constant(Tensor::full(&[1], 2.0));
        let beta = g.constant(Tensor::full(&[1], 0.5));
        let (y, stats) = g.batch_norm(&x, &gamma, &beta, &[2.0], &[3.0], false).unwrap();
        assert!(stats.is_none());
        let s = (3.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] - ((1.0 - 2.0) / s * 2.0 + 0.5)).abs() < 1e-12);
        assert!((y.data()[1] - ((4.0 - 2.0) / s * 2.0 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn unit_input_passes_through() {
        // Per-channel mean 0, biased variance 1.
        let mut g = Graph::inference();
        let x = g.constant(Tensor::new(&[2, 1, 1, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap());
        let one = g.constant(Tensor::full(&[1], 1.0));
        let zero = g.constant(Tensor::zeros(&[1]));
        let (y, _) = g.batch_norm(&x, &one, &zero, &[0.0], &[1.0], true).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b as &f64).abs() < 1e-5);
        }
    }

    #[test]
    fn running_update() {
        let stats = BatchStats { mean: vec![1.0f64], var: vec![2.0], count: 3 };
        let (mut m, mut v) = (vec![0.0], vec![1.0]);
        stats.update_running(&mut m, &mut v, 0.1);
        assert!((m[0] - 0.1).abs() < 1e-15);
        assert!((v[0] - (0.9 + 0.1 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn instance_norm_rows() {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::new(&[1, 1, 2, 4], vec![2.0, 2.0, 2.0, 2.0, 1.0, -1.0, 1.0, -1.0]).unwrap());
        let y = g.instance_norm_freq(&x).unwrap();
        assert!(y.data()[..4].iter().all(|&v| v == 0.0));
        for (a, b) in y.data()[4..].iter().zip(&x.data()[4..]) {
            assert!((a - b as &f64).abs() < 1e-5);
        }
        let short = g.constant(Tensor::zeros(&[1, 1, 2, 1]));
        assert!(g.instance_norm_freq(&short).is_err());
    }

    #[test]
    fn instance_norm_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut g = Graph::inference();
        let x = g.constant(Tensor::new(&[1, 1, 2, 8], data.clone()).unwrap());
        let y = g.instance_norm_freq(&x).unwrap();
        for r in 0..2 {
            let row = &data[r * 8..(r + 1) * 8];
            let mu = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 8.0;
            for t in 0..8 {
                let want = (row[t] - mu) / (var + 1e-5).sqrt();
                assert!((y.data()[r * 8 + t] - want).abs() < 1e-6);
            }
        }
    }
}

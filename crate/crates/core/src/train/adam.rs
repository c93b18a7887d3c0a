use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one pair per parameter tensor
/// (empty for non-trainable ones).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| if p.trainable { vec![T::zero(); p.value.numel()] } else { Vec::new() })
                .collect::<Vec<_>>()
        };
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// One bias-corrected update of every trainable parameter.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Vec<T>], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Usage(format!(
                "{} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let corr1 = T::from_f64(1.0 / (1.0 - c.beta1.powi(t)));
        let corr2 = T::from_f64(1.0 / (1.0 - c.beta2.powi(t)));
        let (lr, eps) = (T::from_f64(lr), T::from_f64(c.eps));
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            if !store.get(id).trainable {
                continue;
            }
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            let theta = store.value_mut(id).data_mut();
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                theta[i] -= lr * (m[i] * corr1) / ((v[i] * corr2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

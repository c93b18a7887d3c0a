//! The classification network.
//!
//! ```text
//! input N x 1 x F x T
//!   Doub-Inc   Inc01 BN ReLU Inc01 BN ReLU AP Dropout RN     -> C0 x F/2 x T/2
//!   Inc-Res 1  (IncFT ReLU AP RN) + (IncT ReLU AP RN)
//!              + (Conv1x1 BN MP), Dropout                    -> C1 x F/4 x T/4
//!   Inc-Res 2  same                                          -> C2 x F/8 x T/8
//!   Pooling    mean over C, max over T, mean over F
//!   Attention  one self-attention per map, mean over sequence, concat
//!   FC ReLU Dropout FC softmax                               -> N x classes
//! ```

mod config;
pub mod layers;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::ModelConfig;
pub use layers::{BnUpdate, Pass, BN_MOMENTUM};

use crate::autodiff::{grad_check_at, GradCheck, Graph, ParamId, ParamStore, PoolKind, Real, Tensor, Var};
use crate::error::{Error, Result};
use layers::{pool_half, pooling_maps, residual_norm, Attention, BatchNorm, Conv, Dense, Inception};

/// Dims of the tensor leaving one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockOutput {
    pub block: String,
    pub dims: Vec<usize>,
}

/// Result of a forward pass.
pub struct Forward<T: Real> {
    /// `N x classes` softmax output.
    pub probs: Var<T>,
    pub blocks: Vec<BlockOutput>,
    pub bn_updates: Vec<BnUpdate<T>>,
}

#[derive(Debug, Clone)]
struct DoubInc {
    inc1: Inception,
    bn1: BatchNorm,
    inc2: Inception,
    bn2: BatchNorm,
}

#[derive(Debug, Clone)]
struct IncRes {
    ft: Inception,
    t: Inception,
    shortcut: Conv,
    shortcut_bn: BatchNorm,
}

#[derive(Debug, Clone)]
struct Head {
    attn: [Attention; 3],
    fc1: Dense,
    fc2: Dense,
}

/// Network parameters plus the layer layout that indexes them.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    config: ModelConfig,
    store: ParamStore<T>,
    doub_inc: DoubInc,
    inc_res: Vec<IncRes>,
    head: Head,
}

impl<T: Real> Model<T> {
    /// Builds the network with freshly initialised parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng: &mut dyn RngCore = &mut rng;
        let mut store = ParamStore::new();
        let s = &mut store;
        let c0 = config.doub_inc_channels;
        let doub_inc = DoubInc {
            inc1: Inception::inc01(s, "doub_inc.inc01_1", 1, c0, rng)?,
            bn1: BatchNorm::new(s, "doub_inc.bn1", c0)?,
            inc2: Inception::inc01(s, "doub_inc.inc01_2", c0, c0, rng)?,
            bn2: BatchNorm::new(s, "doub_inc.bn2", c0)?,
        };
        let mut inc_res = Vec::new();
        let mut cin = c0;
        for (i, &c) in config.inc_res_channels.iter().enumerate() {
            let name = format!("inc_res{}", i + 1);
            inc_res.push(IncRes {
                ft: Inception::inc_ft(s, &format!("{name}.incft"), cin, c, &config.incft_kernels[i], rng)?,
                t: Inception::inc_t(s, &format!("{name}.inct"), cin, c, &config.inct_kernels[i], rng)?,
                shortcut: Conv::new(s, &format!("{name}.shortcut.conv1x1"), cin, c, (1, 1), rng)?,
                shortcut_bn: BatchNorm::new(s, &format!("{name}.shortcut.bn"), c)?,
            });
            cin = c;
        }
        let (c, _, t) = config.pooled_dims();
        let (h, k) = (config.attn_heads, config.attn_key_dim);
        let attn = [
            Attention::new(s, "attention.freq_time", t, h, k, rng)?,
            Attention::new(s, "attention.freq_channel", c, h, k, rng)?,
            Attention::new(s, "attention.time_channel", c, h, k, rng)?,
        ];
        let head = Head {
            attn,
            fc1: Dense::new(s, "fc1", t + 2 * c, config.fc_hidden, true, rng)?,
            fc2: Dense::new(s, "fc2", config.fc_hidden, config.n_classes, true, rng)?,
        };
        Ok(Self { config, store, doub_inc, inc_res, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Total number of scalars held by the model, running statistics
    /// included.
    pub fn param_count(&self) -> usize {
        self.store.iter().map(|(_, p)| p.value.numel()).sum()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.store.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.numel()).sum()
    }

    /// The same model at another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            doub_inc: self.doub_inc.clone(),
            inc_res: self.inc_res.clone(),
            head: self.head.clone(),
        }
    }

    /// Binds every parameter on `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var<T>> {
        self.store.ids().map(|id| g.param(&self.store, id)).collect()
    }

    /// Forward pass; training mode when `rng` is given (batch statistics,
    /// dropout), eval mode otherwise. Input is `N x 1 x F x T` or `N x F x T`.
    pub fn forward(&self, g: &mut Graph<T>, x: &Var<T>, rng: Option<&mut dyn RngCore>) -> Result<Forward<T>> {
        let params = self.bind(g);
        self.forward_with(g, &params, x, rng.map(|r| r as &mut dyn RngCore))
    }

    /// Forward pass with externally bound parameter values, one per
    /// parameter id.
    pub fn forward_with<'a>(
        &self,
        g: &'a mut Graph<T>,
        params: &'a [Var<T>],
        x: &Var<T>,
        rng: Option<&'a mut dyn RngCore>,
    ) -> Result<Forward<T>> {
        if params.len() != self.store.len() {
            return Err(Error::shape(
                "model",
                format!("{} bound values for {} parameters", params.len(), self.store.len()),
            ));
        }
        let (f, t) = self.config.input_dims;
        let n = match x.dims() {
            &[n, 1, xf, xt] | &[n, xf, xt] if (xf, xt) == (f, t) && n > 0 => n,
            other => return Err(Error::shape("model input", format!("expected N x 1 x {f} x {t}, got {other:?}"))),
        };
        let x = g.reshape(x, &[n, 1, f, t])?;
        let mut pass = Pass::new(g, params, rng);
        let mut blocks = Vec::new();
        let mut record =
            |name: &str, v: &Var<T>| blocks.push(BlockOutput { block: name.to_string(), dims: v.dims().to_vec() });

        let cfg = &self.config;
        let y = self.doub_inc_forward(&mut pass, &x)?;
        record("doub_inc", &y);
        let mut y = y;
        for (i, block) in self.inc_res.iter().enumerate() {
            y = Self::inc_res_forward(block, cfg, &mut pass, &y)
                .map_err(|e| name_block(e, &format!("inc_res{}", i + 1)))?;
            record(&format!("inc_res{}", i + 1), &y);
        }

        let maps = pooling_maps(pass.g, &y)?;
        let mut feats = Vec::with_capacity(3);
        for (attn, map) in self.head.attn.iter().zip(&maps) {
            let a = attn.forward(&mut pass, map)?;
            feats.push(pass.g.reduce_axis(&a, 1, PoolKind::Avg)?);
        }
        for (name, m) in ["pool.freq_time", "pool.freq_channel", "pool.time_channel"].iter().zip(&maps) {
            record(name, m);
        }
        let refs: Vec<&Var<T>> = feats.iter().collect();
        let z = pass.g.concat_last(&refs)?;
        record("attention", &z);
        let z = self.head.fc1.forward(&mut pass, &z)?;
        let z = pass.g.relu(&z)?;
        let z = pass.dropout(&z, cfg.dropout)?;
        let z = self.head.fc2.forward(&mut pass, &z)?;
        let probs = pass.g.softmax(&z)?;
        record("output", &probs);
        Ok(Forward { probs, blocks, bn_updates: pass.into_updates() })
    }

    fn doub_inc_forward(&self, pass: &mut Pass<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let b = &self.doub_inc;
        let y = b.inc1.forward(pass, x)?;
        let y = b.bn1.forward(pass, &y)?;
        let y = pass.g.relu(&y)?;
        let y = b.inc2.forward(pass, &y)?;
        let y = b.bn2.forward(pass, &y)?;
        let y = pass.g.relu(&y)?;
        let y = pool_half(pass.g, &y, PoolKind::Avg)?;
        let y = pass.dropout(&y, self.config.dropout)?;
        residual_norm(pass.g, &y, self.config.rn_lambda).map_err(|e| name_block(e, "doub_inc"))
    }

    fn inc_res_forward(b: &IncRes, cfg: &ModelConfig, pass: &mut Pass<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let branch = |inc: &Inception, pass: &mut Pass<'_, T>| -> Result<Var<T>> {
            let y = inc.forward(pass, x)?;
            let y = pass.g.relu(&y)?;
            let y = pool_half(pass.g, &y, PoolKind::Avg)?;
            residual_norm(pass.g, &y, cfg.rn_lambda)
        };
        let ft = branch(&b.ft, pass)?;
        let t = branch(&b.t, pass)?;
        let s = b.shortcut.forward(pass, x)?;
        let s = b.shortcut_bn.forward(pass, &s)?;
        let s = pool_half(pass.g, &s, PoolKind::Max)?;
        let y = pass.g.add(&ft, &t)?;
        let y = pass.g.add(&y, &s)?;
        pass.dropout(&y, cfg.dropout)
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        for u in updates {
            let mut mean = self.store.value(u.mean).data().to_vec();
            let mut var = self.store.value(u.var).data().to_vec();
            u.stats.update_running(&mut mean, &mut var, BN_MOMENTUM);
            self.store.value_mut(u.mean).data_mut().copy_from_slice(&mean);
            self.store.value_mut(u.var).data_mut().copy_from_slice(&var);
        }
    }

    /// Eval-mode class probabilities for a batch, `N x classes` row-major.
    pub fn predict(&self, x: Tensor<T>) -> Result<Vec<T>> {
        let mut g = Graph::inference();
        let x = g.constant(x);
        Ok(self.forward(&mut g, &x, None)?.probs.data().to_vec())
    }
}

impl Model<f64> {
    /// Central-difference check of the eval-mode forward followed by the KL
    /// loss against `target`, over the input and at most `max_entries`
    /// random entries of every trainable tensor.
    pub fn grad_check(
        &self,
        x: &Tensor<f64>,
        target: &Tensor<f64>,
        max_entries: usize,
        seed: u64,
    ) -> Result<GradCheck> {
        let trainable: Vec<ParamId> = self.store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        let mut inputs: Vec<Tensor<f64>> = trainable.iter().map(|&id| self.store.value(id).clone()).collect();
        inputs.push(x.clone());
        grad_check_at(inputs, seed, max_entries, |g, vars| {
            let mut next = vars.iter();
            let params: Vec<Var<f64>> = self
                .store
                .iter()
                .map(|(_, p)| match p.trainable {
                    true => next.next().cloned().expect("one input per trainable tensor"),
                    false => g.constant(p.value.as_ref().clone()),
                })
                .collect();
            let x = &vars[vars.len() - 1];
            let out = self.forward_with(g, &params, x, None)?;
            g.kl_div(&out.probs, target)
        })
    }
}

fn name_block(e: Error, block: &str) -> Error {
    match e {
        Error::Shape { context, detail } => Error::Shape { context: format!("{block}: {context}"), detail },
        other => other,
    }
}

//! Building blocks of the network. Every layer owns parameter ids into a
//! shared [`ParamStore`] and runs inside a [`Pass`].

use rand::{Rng, RngCore};

use crate::autodiff::{BatchStats, Graph, Padding, ParamId, ParamStore, PoolKind, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Momentum of the running batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// One forward evaluation: the graph, the bound parameter values (indexed by
/// [`ParamId`]), the dropout RNG in training mode, and the batch statistics
/// collected along the way.
pub struct Pass<'a, T: Real> {
    pub g: &'a mut Graph<T>,
    params: &'a [Var<T>],
    rng: Option<&'a mut dyn RngCore>,
    pub(crate) bn_updates: Vec<BnUpdate<T>>,
}

/// Batch statistics to fold into a layer's running averages.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats<T>,
}

impl<'a, T: Real> Pass<'a, T> {
    /// Training mode when `rng` is given, eval mode otherwise.
    pub fn new(g: &'a mut Graph<T>, params: &'a [Var<T>], rng: Option<&'a mut dyn RngCore>) -> Self {
        Self { g, params, rng, bn_updates: Vec::new() }
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn p(&self, id: ParamId) -> &'a Var<T> {
        &self.params[id.0]
    }

    pub fn dropout(&mut self, x: &Var<T>, p: f64) -> Result<Var<T>> {
        match self.rng.as_deref_mut() {
            Some(rng) => self.g.dropout(x, p, rng),
            None => Ok(x.clone()),
        }
    }

    pub fn into_updates(self) -> Vec<BnUpdate<T>> {
        self.bn_updates
    }
}

fn glorot<T: Real>(dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| T::from_f64(rng.random_range(-limit..limit))).collect())
}

/// Same-padded 2-D convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: (usize, usize),
}

impl Conv {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        let w = glorot(&[cout, cin, kh, kw], cin * kh * kw, cout * kh * kw, rng)?;
        Ok(Self {
            weight: store.add(format!("{name}.weight"), w, true, true)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), true, false)?,
            kernel,
        })
    }

    pub fn forward<T: Real>(&self, pass: &mut Pass<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let (w, b) = (pass.p(self.weight), pass.p(self.bias));
        pass.g.conv2d(x, w, Some(b), Padding::Same)
    }
}

/// Parallel same-padded convolutions of equal width, summed.
#[derive(Debug, Clone)]
pub struct Inception {
    pub branches: Vec<Conv>,
}

impl Inception {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernels: &[(usize, usize)],
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if cout == 0 {
            return Err(Error::InvalidConfig(format!("{name}: channels must be positive")));
        }
        let branches = kernels
            .iter()
            .map(|&(kh, kw)| Conv::new(store, &format!("{name}.conv{kh}x{kw}"), cin, cout, (kh, kw), rng))
            .collect::<Result<_>>()?;
        Ok(Self { branches })
    }

    /// `[3x3]`, `[1x1]` and `[4x1]` branches.
    pub fn inc01<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Self::new(store, name, cin, cout, &[(3, 3), (1, 1), (4, 1)], rng)
    }

    /// Square `[K x K]` branches.
    pub fn inc_ft<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        ks: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let kernels: Vec<_> = ks.iter().map(|&k| (k, k)).collect();
        Self::new(store, name, cin, cout, &kernels, rng)
    }

    /// Temporal `[1 x K]` branches.
    pub fn inc_t<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        ks: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let kernels: Vec<_> = ks.iter().map(|&k| (1, k)).collect();
        Self::new(store, name, cin, cout, &kernels, rng)
    }

    pub fn forward<T: Real>(&self, pass: &mut Pass<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let mut acc: Option<Var<T>> = None;
        for conv in &self.branches {
            let y = conv.forward(pass, x)?;
            acc = Some(match acc {
                Some(a) => pass.g.add(&a, &y)?,
                None => y,
            });
        }
        acc.ok_or_else(|| Error::InvalidConfig("inception block without branches".into()))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one()), true, false)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true, false)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false, false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::full(&[channels], T::one()), false, false)?,
        })
    }

    pub fn forward<T: Real>(&self, pass: &mut Pass<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let training = pass.training();
        let (gamma, beta) = (pass.p(self.gamma), pass.p(self.beta));
        let (mean, var) = (pass.p(self.running_mean), pass.p(self.running_var));
        let (y, stats) = pass.g.batch_norm(x, gamma, beta, mean.data(), var.data(), training)?;
        if let Some(stats) = stats {
            pass.bn_updates.push(BnUpdate { mean: self.running_mean, var: self.running_var, stats });
        }
        Ok(y)
    }
}

/// Affine layer over the last axis.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Dense {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), glorot(&[din, dout], din, dout, rng)?, true, true)?;
        let bias =
            if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros(&[dout]), true, false)?) } else { None };
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Real>(&self, pass: &mut Pass<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = pass.p(self.weight);
        let b = self.bias.map(|b| pass.p(b));
        pass.g.dense(x, w, b)
    }
}

/// `lambda * x + instance_norm_freq(x)`.
pub fn residual_norm<T: Real>(g: &mut Graph<T>, x: &Var<T>, lambda: f64) -> Result<Var<T>> {
    let normed = g.instance_norm_freq(x)?;
    if lambda == 0.0 {
        return Ok(normed);
    }
    let scaled = g.scale(x, lambda)?;
    g.add(&scaled, &normed)
}

/// Multi-head self-attention over `N x S x D` with per-head key and value
/// width `key_dim` and an output projection back to `D`. No biases.
#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub key_dim: usize,
}

impl Attention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        key_dim: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let hk = heads * key_dim;
        let mut proj = |suffix: &str, din: usize, dout: usize| {
            Dense::new(store, &format!("{name}.{suffix}"), din, dout, false, rng).map(|d| d.weight)
        };
        Ok(Self {
            wq: proj("query", d, hk)?,
            wk: proj("key", d, hk)?,
            wv: proj("value", d, hk)?,
            wo: proj("output", hk, d)?,
            heads,
            key_dim,
        })
    }

    /// `[N, S, H*K] -> [N*H, S, K]`
    fn split_heads<T: Real>(&self, g: &mut Graph<T>, x: &Var<T>, n: usize, s: usize) -> Result<Var<T>> {
        let (h, k) = (self.heads, self.key_dim);
        let x = g.reshape(x, &[n, s, h, k])?;
        let x = g.permute(&x, &[0, 2, 1, 3])?;
        g.reshape(&x, &[n * h, s, k])
    }

    pub fn forward<T: Real>(&self, pass: &mut Pass<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let &[n, s, _] = x.dims() else {
            return Err(Error::shape("attention", format!("expected N x S x D, got {:?}", x.dims())));
        };
        let (h, k) = (self.heads, self.key_dim);
        let (wq, wk, wv, wo) = (pass.p(self.wq), pass.p(self.wk), pass.p(self.wv), pass.p(self.wo));
        let g = &mut *pass.g;
        let q = g.dense(x, wq, None)?;
        let kx = g.dense(x, wk, None)?;
        let v = g.dense(x, wv, None)?;
        let q = self.split_heads(g, &q, n, s)?;
        let kx = self.split_heads(g, &kx, n, s)?;
        let v = self.split_heads(g, &v, n, s)?;
        let scores = g.batched_matmul(&q, &kx, true)?;
        let scores = g.scale(&scores, 1.0 / (k as f64).sqrt())?;
        let attn = g.softmax(&scores)?;
        let ctx = g.batched_matmul(&attn, &v, false)?;
        let ctx = g.reshape(&ctx, &[n, h, s, k])?;
        let ctx = g.permute(&ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(&ctx, &[n, s, h * k])?;
        g.dense(&ctx, wo, None)
    }
}

/// Global reductions of `N x C x F x T` into three sequences:
/// `F x T` (mean over C), `F x C` (max over T) and `T x C` (mean over F).
pub fn pooling_maps<T: Real>(g: &mut Graph<T>, x: &Var<T>) -> Result<[Var<T>; 3]> {
    x.value().dims4("pooling block")?;
    let map1 = g.reduce_axis(x, 1, PoolKind::Avg)?;
    let m2 = g.reduce_axis(x, 3, PoolKind::Max)?;
    let map2 = g.permute(&m2, &[0, 2, 1])?;
    let m3 = g.reduce_axis(x, 2, PoolKind::Avg)?;
    let map3 = g.permute(&m3, &[0, 2, 1])?;
    Ok([map1, map2, map3])
}

pub(crate) fn pool_half<T: Real>(g: &mut Graph<T>, x: &Var<T>, kind: PoolKind) -> Result<Var<T>> {
    g.pool2d(x, kind, (2, 2), (2, 2))
}

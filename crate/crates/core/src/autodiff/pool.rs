use super::graph::{Graph, Var};
use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

impl<T: Real> Graph<T> {
    /// Windowed pooling over the last two axes of `N x C x H x W`, no padding
    /// (trailing rows/columns that do not fill a window are dropped).
    pub fn pool2d(
        &mut self,
        x: &Var<T>,
        kind: PoolKind,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Var<T>> {
        let [n, c, h, w] = x.value().dims4("pool2d")?;
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || kh > h || kw > w {
            return Err(Error::InvalidConfig(format!(
                "pool kernel {kh}x{kw} stride {sh}x{sw} does not fit input {h}x{w}"
            )));
        }
        let ho = (h - kh) / sh + 1;
        let wo = (w - kw) / sw + 1;
        let xd = x.data();
        let planes = n * c;
        let mut out = Vec::with_capacity(planes * ho * wo);
        let mut argmax = Vec::new();
        let track = kind == PoolKind::Max && self.needs_grad(&[x]);
        let inv = T::from_f64(1.0 / (kh * kw) as f64);
        for p in 0..planes {
            let plane = &xd[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y0, x0) = (oy * sh, ox * sw);
                    match kind {
                        PoolKind::Avg => {
                            let mut acc = T::zero();
                            for i in 0..kh {
                                for v in &plane[(y0 + i) * w + x0..(y0 + i) * w + x0 + kw] {
                                    acc += *v;
                                }
                            }
                            out.push(acc * inv);
                        }
                        PoolKind::Max => {
                            let mut best = (y0 * w + x0, plane[y0 * w + x0]);
                            for i in 0..kh {
                                for j in 0..kw {
                                    let idx = (y0 + i) * w + x0 + j;
                                    if plane[idx] > best.1 {
                                        best = (idx, plane[idx]);
                                    }
                                }
                            }
                            out.push(best.1);
                            if track {
                                argmax.push(p * h * w + best.0);
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[n, c, ho, wo], out)?;
        Ok(self.push(
            &[x],
            out,
            Box::new(move |args, slots| {
                let Some(dx) = slots[0].as_mut() else { return };
                match kind {
                    PoolKind::Max => {
                        for (&i, &g) in argmax.iter().zip(args.grad) {
                            dx[i] += g;
                        }
                    }
                    PoolKind::Avg => {
                        for p in 0..planes {
                            for oy in 0..ho {
                                for ox in 0..wo {
                                    let g = args.grad[(p * ho + oy) * wo + ox] * inv;
                                    for i in 0..kh {
                                        let row = p * h * w + (oy * sh + i) * w + ox * sw;
                                        for d in &mut dx[row..row + kw] {
                                            *d += g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }),
        ))
    }

    /// Collapses one axis by its mean or maximum; the axis is removed.
    pub fn reduce_axis(&mut self, x: &Var<T>, axis: usize, kind: PoolKind) -> Result<Var<T>> {
        let dims = x.dims().to_vec();
        if axis >= dims.len() {
            return Err(Error::shape("reduce_axis", format!("axis {axis} out of range for {dims:?}")));
        }
        let outer: usize = dims[..axis].iter().product();
        let len = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        if len == 0 {
            return Err(Error::shape("reduce_axis", "cannot reduce an empty axis"));
        }
        let xd = x.data();
        let mut out = vec![T::zero(); outer * inner];
        let mut arg = vec![0usize; if kind == PoolKind::Max { outer * inner } else { 0 }];
        let inv = T::from_f64(1.0 / len as f64);
        for o in 0..outer {
            let base = o * len * inner;
            let dst = &mut out[o * inner..(o + 1) * inner];
            match kind {
                PoolKind::Avg => {
                    for k in 0..len {
                        for (d, &v) in dst.iter_mut().zip(&xd[base + k * inner..base + (k + 1) * inner]) {
                            *d += v;
                        }
                    }
                    dst.iter_mut().for_each(|d| *d *= inv);
                }
                PoolKind::Max => {
                    dst.copy_from_slice(&xd[base..base + inner]);
                    let a = &mut arg[o * inner..(o + 1) * inner];
                    for k in 1..len {
                        for (i, &v) in xd[base + k * inner..base + (k + 1) * inner].iter().enumerate() {
                            if v > dst[i] {
                                dst[i] = v;
                                a[i] = k;
                            }
                        }
                    }
                }
            }
        }
        let mut out_dims = dims.clone();
        out_dims.remove(axis);
        if out_dims.is_empty() {
            out_dims.push(1);
        }
        let out = Tensor::new(&out_dims, out)?;
        Ok(self.push(
            &[x],
            out,
            Box::new(move |args, slots| {
                let Some(dx) = slots[0].as_mut() else { return };
                for o in 0..outer {
                    for i in 0..inner {
                        let g = args.grad[o * inner + i];
                        match kind {
                            PoolKind::Avg => {
                                for k in 0..len {
                                    dx[(o * len + k) * inner + i] += g * inv;
                                }
                            }
                            PoolKind::Max => dx[(o * len + arg[o * inner + i]) * inner + i] += g,
                        }
                    }
                }
            }),
        ))
    }
}

use rand::Rng;

use super::graph::{Graph, Var};
use super::linalg::{matmul_into, MatRef};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to predictions inside the KL loss.
pub const KL_CLAMP: f64 = 1e-8;

fn same_dims<T: Real>(op: &str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn last_axis<T: Real>(op: &str, x: &Var<T>) -> Result<(usize, usize)> {
    let d = *x.dims().last().ok_or_else(|| Error::shape(op, "scalar input"))?;
    if d == 0 {
        return Err(Error::shape(op, "empty last axis"));
    }
    Ok((x.value().numel() / d, d))
}

fn row_major_strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Moves axis `perm[i]` of `data` to position `i`.
fn permute_data<T: Copy>(data: &[T], dims: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let in_strides = row_major_strides(dims);
    let out_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; dims.len()];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out_dims, out)
}

impl<T: Real> Graph<T> {
    pub fn add(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_dims("add", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(a.dims(), data)?;
        Ok(self.push(
            &[a, b],
            out,
            Box::new(|args, slots| {
                for s in slots.iter_mut().flatten() {
                    s.iter_mut().zip(args.grad).for_each(|(d, &g)| *d += g);
                }
            }),
        ))
    }

    pub fn scale(&mut self, x: &Var<T>, factor: f64) -> Result<Var<T>> {
        let f = T::from_f64(factor);
        let data = x.data().iter().map(|&v| v * f).collect();
        let out = Tensor::new(x.dims(), data)?;
        Ok(self.push(
            &[x],
            out,
            Box::new(move |args, slots| {
                if let Some(d) = slots[0].as_mut() {
                    d.iter_mut().zip(args.grad).for_each(|(d, &g)| *d += g * f);
                }
            }),
        ))
    }

    pub fn relu(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let out = Tensor::new(x.dims(), data)?;
        Ok(self.push(
            &[x],
            out,
            Box::new(|args, slots| {
                if let Some(d) = slots[0].as_mut() {
                    for ((d, &g), &y) in d.iter_mut().zip(args.grad).zip(args.output.data()) {
                        if y > T::zero() {
                            *d += g;
                        }
                    }
                }
            }),
        ))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let (rows, d) = last_axis("softmax", x)?;
        let xd = x.data();
        let mut out = vec![T::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let o = &mut out[r * d..(r + 1) * d];
            let mut s = T::zero();
            for (o, &v) in o.iter_mut().zip(row) {
                *o = (v - m).exp();
                s += *o;
            }
            o.iter_mut().for_each(|v| *v /= s);
        }
        let out = Tensor::new(x.dims(), out)?;
        Ok(self.push(
            &[x],
            out,
            Box::new(move |args, slots| {
                let Some(dx) = slots[0].as_mut() else { return };
                let y = args.output.data();
                for r in 0..rows {
                    let span = r * d..(r + 1) * d;
                    let dot: T = args.grad[span.clone()].iter().zip(&y[span.clone()]).map(|(&g, &y)| g * y).sum();
                    for i in span {
                        dx[i] += y[i] * (args.grad[i] - dot);
                    }
                }
            }),
        ))
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// the survivors by `1 / (1 - p)`. Only call this in training mode.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: &Var<T>, p: f64, rng: &mut R) -> Result<Var<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("dropout rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x.clone());
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> =
            (0..x.value().numel()).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(x.dims(), data)?;
        Ok(self.push(
            &[x],
            out,
            Box::new(move |args, slots| {
                if let Some(d) = slots[0].as_mut() {
                    for ((d, &g), &m) in d.iter_mut().zip(args.grad).zip(&mask) {
                        *d += g * m;
                    }
                }
            }),
        ))
    }

    /// Affine map over the last axis: `x [.., D] * w [D, O] + b [O]`.
    pub fn dense(&mut self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
        let (rows, d) = last_axis("dense", x)?;
        let (wd, o) = match w.dims() {
            [a, b] => (*a, *b),
            other => return Err(Error::shape("dense", format!("weight must be 2-D, got {other:?}"))),
        };
        if wd != d {
            return Err(Error::shape("dense", format!("input width {d} vs weight rows {wd}")));
        }
        if let Some(b) = b {
            if b.dims() != [o] {
                return Err(Error::shape("dense", format!("bias {:?} for {o} outputs", b.dims())));
            }
        }
        let mut out = vec![T::zero(); rows * o];
        matmul_into(MatRef::new(x.data(), rows, d), MatRef::new(w.data(), d, o), &mut out, o, false);
        if let Some(b) = b {
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(b.data()).for_each(|(v, &bb)| *v += bb);
            }
        }
        let mut dims = x.dims().to_vec();
        *dims.last_mut().unwrap() = o;
        let out = Tensor::new(&dims, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            &inputs,
            out,
            Box::new(move |args, slots| {
                let dy = MatRef::new(args.grad, rows, o);
                if let Some(dx) = slots[0].as_mut() {
                    matmul_into(dy, MatRef::new(args.inputs[1].data(), d, o).t(), dx, d, true);
                }
                if let Some(dw) = slots[1].as_mut() {
                    matmul_into(MatRef::new(args.inputs[0].data(), rows, d).t(), dy, dw, o, true);
                }
                if let Some(Some(db)) = slots.get_mut(2) {
                    for row in args.grad.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                    }
                }
            }),
        ))
    }

    /// Batched product of `a [B, M, K]` with `b [B, K, N]`, or with
    /// `b [B, N, K]` read transposed when `trans_b` is set.
    pub fn batched_matmul(&mut self, a: &Var<T>, b: &Var<T>, trans_b: bool) -> Result<Var<T>> {
        let (&[ba, m, k], &[bb, b1, b2]) = (a.dims(), b.dims()) else {
            return Err(Error::shape(
                "batched_matmul",
                format!("need 3-D inputs, got {:?} and {:?}", a.dims(), b.dims()),
            ));
        };
        let (kb, n) = if trans_b { (b2, b1) } else { (b1, b2) };
        if ba != bb || kb != k {
            return Err(Error::shape("batched_matmul", format!("{:?} x {:?} (trans_b {trans_b})", a.dims(), b.dims())));
        }
        fn bview<T>(data: &[T], i: usize, b1: usize, b2: usize, trans: bool) -> MatRef<'_, T> {
            let v = MatRef::new(&data[i * b1 * b2..(i + 1) * b1 * b2], b1, b2);
            if trans {
                v.t()
            } else {
                v
            }
        }
        let mut out = vec![T::zero(); ba * m * n];
        for i in 0..ba {
            let av = MatRef::new(&a.data()[i * m * k..(i + 1) * m * k], m, k);
            matmul_into(av, bview(b.data(), i, b1, b2, trans_b), &mut out[i * m * n..], n, false);
        }
        let out = Tensor::new(&[ba, m, n], out)?;
        Ok(self.push(
            &[a, b],
            out,
            Box::new(move |args, slots| {
                let (ad, bd) = (args.inputs[0].data(), args.inputs[1].data());
                for i in 0..ba {
                    let dy = MatRef::new(&args.grad[i * m * n..(i + 1) * m * n], m, n);
                    if let Some(da) = slots[0].as_mut() {
                        matmul_into(dy, bview(bd, i, b1, b2, trans_b).t(), &mut da[i * m * k..], k, true);
                    }
                    if let Some(db) = slots[1].as_mut() {
                        let av = MatRef::new(&ad[i * m * k..(i + 1) * m * k], m, k);
                        let dst = &mut db[i * b1 * b2..];
                        if trans_b {
                            matmul_into(dy.t(), av, dst, k, true);
                        } else {
                            matmul_into(av.t(), dy, dst, n, true);
                        }
                    }
                }
            }),
        ))
    }

    pub fn reshape(&mut self, x: &Var<T>, dims: &[usize]) -> Result<Var<T>> {
        let out = x.value().clone().reshaped(dims)?;
        Ok(self.push(
            &[x],
            out,
            Box::new(|args, slots| {
                if let Some(d) = slots[0].as_mut() {
                    d.iter_mut().zip(args.grad).for_each(|(d, &g)| *d += g);
                }
            }),
        ))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: &Var<T>, perm: &[usize]) -> Result<Var<T>> {
        let rank = x.dims().len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} is not a permutation of {rank} axes")));
        }
        let (dims, data) = permute_data(x.data(), x.dims(), perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out = Tensor::new(&dims, data)?;
        Ok(self.push(
            &[x],
            out,
            Box::new(move |args, slots| {
                if let Some(d) = slots[0].as_mut() {
                    let (_, back) = permute_data(args.grad, args.output.dims(), &inverse);
                    d.iter_mut().zip(back).for_each(|(d, g)| *d += g);
                }
            }),
        ))
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[&Var<T>]) -> Result<Var<T>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let lead = &first.dims()[..first.dims().len().saturating_sub(1)];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pl, w) = p.dims().split_at(p.dims().len().saturating_sub(1));
            if pl != lead || w.is_empty() {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", first.dims(), p.dims())));
            }
            widths.push(w[0]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut dims = lead.to_vec();
        dims.push(total);
        let out = Tensor::new(&dims, out)?;
        Ok(self.push(
            parts,
            out,
            Box::new(move |args, slots| {
                let mut off = 0;
                for (slot, &w) in slots.iter_mut().zip(&widths) {
                    if let Some(d) = slot.as_mut() {
                        for r in 0..rows {
                            let src = &args.grad[r * total + off..r * total + off + w];
                            d[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(d, &g)| *d += g);
                        }
                    }
                    off += w;
                }
            }),
        ))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let s: T = x.data().iter().copied().sum();
        Ok(self.push(
            &[x],
            Tensor::scalar(s),
            Box::new(|args, slots| {
                if let Some(d) = slots[0].as_mut() {
                    d.iter_mut().for_each(|d| *d += args.grad[0]);
                }
            }),
        ))
    }

    /// `sum_i weights[i] * x[i]` with constant weights.
    pub fn weighted_sum(&mut self, x: &Var<T>, weights: &[T]) -> Result<Var<T>> {
        if weights.len() != x.value().numel() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} entries", weights.len(), x.value().numel()),
            ));
        }
        let s: T = x.data().iter().zip(weights).map(|(&a, &b)| a * b).sum();
        let w = weights.to_vec();
        Ok(self.push(
            &[x],
            Tensor::scalar(s),
            Box::new(move |args, slots| {
                if let Some(d) = slots[0].as_mut() {
                    d.iter_mut().zip(&w).for_each(|(d, &w)| *d += args.grad[0] * w);
                }
            }),
        ))
    }

    /// `(lambda / 2) * sum(x^2)`; the gradient is `lambda * x`.
    pub fn l2_penalty(&mut self, x: &Var<T>, lambda: f64) -> Result<Var<T>> {
        let l = T::from_f64(lambda);
        let half = T::from_f64(0.5);
        let s: T = x.data().iter().map(|&v| v * v).sum::<T>() * l * half;
        Ok(self.push(
            &[x],
            Tensor::scalar(s),
            Box::new(move |args, slots| {
                if let Some(d) = slots[0].as_mut() {
                    let g = args.grad[0] * l;
                    d.iter_mut().zip(args.inputs[0].data()).for_each(|(d, &v)| *d += g * v);
                }
            }),
        ))
    }

    /// `sum y * (log y - log max(p, 1e-8))` over every entry, with
    /// `0 * log 0 = 0`. Targets are constants.
    pub fn kl_div(&mut self, pred: &Var<T>, target: &Tensor<T>) -> Result<Var<T>> {
        if pred.dims() != target.dims() {
            return Err(Error::shape("kl_div", format!("{:?} vs {:?}", pred.dims(), target.dims())));
        }
        let clamp = T::from_f64(KL_CLAMP);
        let mut s = T::zero();
        for (&p, &y) in pred.data().iter().zip(target.data()) {
            if y > T::zero() {
                s += y * (y.ln() - p.max(clamp).ln());
            }
        }
        let y = target.data().to_vec();
        Ok(self.push(
            &[pred],
            Tensor::scalar(s),
            Box::new(move |args, slots| {
                if let Some(d) = slots[0].as_mut() {
                    for ((d, &p), &y) in d.iter_mut().zip(args.inputs[0].data()).zip(&y) {
                        if p > clamp {
                            *d -= args.grad[0] * y / p;
                        }
                    }
                }
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::inference();
        let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 1000.0, 1000.0, 1000.0]));
        let y = g.softmax(&x).unwrap();
        let e = [1.0f64.exp(), 2.0f64.exp(), 3.0f64.exp()];
        let s: f64 = e.iter().sum();
        for i in 0..3 {
            assert!((y.data()[i] - e[i] / s).abs() < 1e-12);
            assert!((y.data()[3 + i] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_and_matmul_match_loops() {
        let mut g = Graph::inference();
        let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = g.constant(t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        let b = g.constant(t(&[2], &[0.5, -0.5]));
        let y = g.dense(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[4.5, 4.5, 10.5, 10.5]);

        let a = g.constant(t(&[1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let bt = g.constant(t(&[1, 2, 3], &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]));
        let y = g.batched_matmul(&a, &bt, true).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2]);
        assert_eq!(y.data(), &[4.0, 2.0, 10.0, 5.0]);
        assert!(g.batched_matmul(&a, &bt, false).is_err());
    }

    #[test]
    fn permute_moves_axes() {
        let mut g = Graph::inference();
        let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = g.permute(&x, &[1, 0]).unwrap();
        assert_eq!(y.dims(), &[3, 2]);
        assert_eq!(y.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert!(g.permute(&x, &[0, 0]).is_err());
        let z = g.constant(Tensor::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap());
        let p = g.permute(&z, &[2, 0, 1]).unwrap();
        assert_eq!(p.dims(), &[4, 2, 3]);
        // out[k][i][j] = in[i][j][k]
        assert_eq!(p.data()[1 * 6 + 1 * 3 + 2], z.data()[1 * 12 + 2 * 4 + 1]);
    }

    #[test]
    fn concat_interleaves_rows() {
        let mut g = Graph::inference();
        let a = g.constant(t(&[2, 1], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let y = g.concat_last(&[&a, &b]).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn kl_handles_zero_targets_and_clamp() {
        let mut g = Graph::new();
        let p = g.input(t(&[1, 3], &[0.5, 0.5, 0.0]));
        let y = t(&[1, 3], &[1.0, 0.0, 0.0]);
        let l = g.kl_div(&p, &y).unwrap();
        assert!((l.data()[0] - 2.0f64.ln()).abs() < 1e-12);
        let grads = g.backward(&l).unwrap();
        assert_eq!(grads.wrt(&p).unwrap(), &[-2.0, 0.0, 0.0]);

        let mut g = Graph::<f64>::inference();
        let p = g.constant(t(&[1, 2], &[0.0, 1.0]));
        let l = g.kl_div(&p, &t(&[1, 2], &[1.0, 0.0])).unwrap();
        assert!((l.data()[0] - (-(1e-8f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn l2_gradient_is_lambda_theta() {
        let mut g = Graph::new();
        let x = g.input(t(&[3], &[1.0, -2.0, 0.5]));
        let l = g.l2_penalty(&x, 0.1).unwrap();
        assert!((l.data()[0] - 0.05 * 5.25).abs() < 1e-15);
        let gr = g.backward(&l).unwrap();
        for (a, b) in gr.wrt(&x).unwrap().iter().zip([0.1, -0.2, 0.05]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dropout_scales_survivors() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::inference();
        let x = g.constant(Tensor::full(&[10000], 1.0));
        let y = g.dropout(&x, 0.2, &mut rng).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        assert!((1800..2200).contains(&zeros), "{zeros}");
        assert!(y.data().iter().all(|&v: &f64| v == 0.0 || (v - 1.25).abs() < 1e-12));
        assert!(g.dropout(&x, 1.0, &mut rng).is_err());
    }
}

use super::graph::{BackwardArgs, Graph, Var};
use super::linalg::{matmul_into, MatRef};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Scalars per im2col chunk; bounds scratch memory for wide inputs.
const COL_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output keeps the input's spatial size. Even kernels put the extra
    /// padding row/column on the high-index side.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    pad_top: usize,
    pad_left: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(x: [usize; 4], k: [usize; 4], padding: Padding) -> Result<Self> {
        let [n, c, h, w] = x;
        let [o, kc, kh, kw] = k;
        if kc != c {
            return Err(Error::shape("conv2d", format!("input has {c} channels, kernel expects {kc}")));
        }
        if kh == 0 || kw == 0 || o == 0 {
            return Err(Error::shape("conv2d", format!("degenerate kernel {k:?}")));
        }
        let (pad_top, pad_left, ho, wo) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, h, w),
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} larger than input {h}x{w}")));
                }
                (0, 0, h - kh + 1, w - kw + 1)
            }
        };
        Ok(Self { n, c, h, w, o, kh, kw, pad_top, pad_left, ho, wo })
    }

    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let rows = if self.pointwise() { self.ho } else { (COL_BUDGET / (self.ckk() * self.wo).max(1)).max(1) };
        let ho = self.ho;
        (0..ho).step_by(rows).map(move |r0| (r0, (r0 + rows).min(ho)))
    }

    /// Range of output columns whose input column `ox + kj - pad_left` is in bounds.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad_left.saturating_sub(kj);
        let hi = (self.w + self.pad_left).saturating_sub(kj).min(self.wo);
        (lo, hi.max(lo))
    }
}

/// Unfolds output rows `r0..r1` of one sample into a `ckk x ((r1-r0)*wo)` matrix.
fn im2col<T: Real>(g: &Geom, x: &[T], r0: usize, r1: usize, col: &mut Vec<T>) {
    let p = (r1 - r0) * g.wo;
    col.clear();
    col.resize(g.ckk() * p, T::zero());
    let mut row = 0;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = g.valid_cols(kj);
                let dst_row = &mut col[row * p..(row + 1) * p];
                for oy in r0..r1 {
                    let iy = (oy + ki) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst = &mut dst_row[(oy - r0) * g.wo..(oy - r0 + 1) * g.wo];
                    let shift = lo + kj - g.pad_left;
                    dst[lo..hi].copy_from_slice(&src[shift..shift + (hi - lo)]);
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds a column matrix back onto one sample.
fn col2im<T: Real>(g: &Geom, col: &[T], r0: usize, r1: usize, dx: &mut [T]) {
    let p = (r1 - r0) * g.wo;
    let mut row = 0;
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = g.valid_cols(kj);
                let src_row = &col[row * p..(row + 1) * p];
                for oy in r0..r1 {
                    let iy = (oy + ki) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src = &src_row[(oy - r0) * g.wo..(oy - r0 + 1) * g.wo];
                    let shift = lo + kj - g.pad_left;
                    for (d, &s) in dst[shift..shift + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
}

fn forward<T: Real>(g: &Geom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let out_plane = g.ho * g.wo;
    let mut out = vec![T::zero(); g.n * g.o * out_plane];
    let wmat = MatRef::new(w, g.o, g.ckk());
    let mut col = Vec::new();
    for s in 0..g.n {
        let xs = &x[s * g.c * g.h * g.w..(s + 1) * g.c * g.h * g.w];
        let os = &mut out[s * g.o * out_plane..(s + 1) * g.o * out_plane];
        for (r0, r1) in g.chunks() {
            let p = (r1 - r0) * g.wo;
            let cols = if g.pointwise() {
                MatRef::strided(&xs[r0 * g.w..], g.c, p, g.h * g.w)
            } else {
                im2col(g, xs, r0, r1, &mut col);
                MatRef::new(&col, g.ckk(), p)
            };
            matmul_into(wmat, cols, &mut os[r0 * g.wo..], out_plane, false);
        }
        if let Some(b) = bias {
            for (plane, &bo) in os.chunks_exact_mut(out_plane).zip(b) {
                plane.iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    out
}

fn backward<T: Real>(g: &Geom, args: &BackwardArgs<'_, T>, slots: &mut [Option<Vec<T>>]) {
    let x = args.inputs[0].data();
    let w = args.inputs[1].data();
    let dy = args.grad;
    let out_plane = g.ho * g.wo;
    let in_plane = g.c * g.h * g.w;
    let (dx_slot, rest) = slots.split_at_mut(1);
    let (dw_slot, db_slot) = rest.split_at_mut(1);
    let wmat = MatRef::new(w, g.o, g.ckk());
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    for s in 0..g.n {
        let xs = &x[s * in_plane..(s + 1) * in_plane];
        let dys = &dy[s * g.o * out_plane..(s + 1) * g.o * out_plane];
        for (r0, r1) in g.chunks() {
            let p = (r1 - r0) * g.wo;
            let dy_chunk = MatRef::strided(&dys[r0 * g.wo..], g.o, p, out_plane);
            if let Some(dw) = dw_slot[0].as_mut() {
                let cols = if g.pointwise() {
                    MatRef::strided(&xs[r0 * g.w..], g.c, p, g.h * g.w)
                } else {
                    im2col(g, xs, r0, r1, &mut col);
                    MatRef::new(&col, g.ckk(), p)
                };
                matmul_into(dy_chunk, cols.t(), dw, g.ckk(), true);
            }
            if let Some(dx) = dx_slot[0].as_mut() {
                let dxs = &mut dx[s * in_plane..(s + 1) * in_plane];
                if g.pointwise() {
                    matmul_into(wmat.t(), dy_chunk, &mut dxs[r0 * g.w..], g.h * g.w, true);
                } else {
                    dcol.clear();
                    dcol.resize(g.ckk() * p, T::zero());
                    matmul_into(wmat.t(), dy_chunk, &mut dcol, p, false);
                    col2im(g, &dcol, r0, r1, dxs);
                }
            }
        }
        if let Some(db) = db_slot.get_mut(0).and_then(Option::as_mut) {
            for (d, plane) in db.iter_mut().zip(dys.chunks_exact(out_plane)) {
                *d += plane.iter().copied().sum::<T>();
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// 2-d cross-correlation of `x: N x C x H x W` with `w: O x C x Kh x Kw`,
    /// plus an optional per-output-channel bias.
    pub fn conv2d(&mut self, x: &Var<T>, w: &Var<T>, bias: Option<&Var<T>>, padding: Padding) -> Result<Var<T>> {
        let geom = Geom::new(x.value().dims4("conv2d input")?, w.value().dims4("conv2d kernel")?, padding)?;
        if let Some(b) = bias {
            if b.dims() != [geom.o] {
                return Err(Error::shape("conv2d", format!("bias dims {:?}, expected [{}]", b.dims(), geom.o)));
            }
        }
        let out = forward(&geom, x.data(), w.data(), bias.map(|b| b.data()));
        let out = Tensor::new(&[geom.n, geom.o, geom.ho, geom.wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(&inputs, out, Box::new(move |args, slots| backward(&geom, args, slots))))
    }
}

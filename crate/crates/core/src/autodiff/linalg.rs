use super::Real;

/// Row-major matrix view with leading dimension `ld`, optionally read
/// transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub ld: usize,
    pub transposed: bool,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols)
    }

    pub fn strided(data: &'a [T], rows: usize, cols: usize, ld: usize) -> Self {
        Self { data, rows, cols, ld, transposed: false }
    }

    pub fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.ld as isize)
        } else {
            (self.ld as isize, 1)
        }
    }

    fn fits(&self) -> bool {
        self.rows == 0 || self.cols == 0 || self.data.len() >= (self.rows - 1) * self.ld + self.cols
    }
}

/// `out (+)= a * b`; `out` is row-major `m x n` with row stride `ldc`.
pub(crate) fn matmul_into<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>, out: &mut [T], ldc: usize, accumulate: bool) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions differ");
    assert!(a.fits() && b.fits(), "matrix view exceeds its buffer");
    if m == 0 || n == 0 {
        return;
    }
    assert!(out.len() >= (m - 1) * ldc + n, "output view exceeds its buffer");
    if k == 0 {
        if !accumulate {
            for r in 0..m {
                out[r * ldc..r * ldc + n].fill(T::zero());
            }
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: every view was bounds-checked above and `out` is a distinct
    // mutable slice.
    unsafe {
        T::gemm(m, k, n, a.data.as_ptr(), rsa, csa, b.data.as_ptr(), rsb, csb, beta, out.as_mut_ptr(), ldc as isize, 1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_and_strided_products() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut c = [0.0; 4];
        matmul_into(MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 2), &mut c, 2, false);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        let mut g = [0.0; 9];
        matmul_into(MatRef::new(&a, 2, 3).t(), MatRef::new(&a, 2, 3), &mut g, 3, false);
        assert_eq!(g, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
        matmul_into(MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 2), &mut c, 2, true);
        assert_eq!(c, [8.0, 10.0, 20.0, 22.0]);
        // Left 2x2 block of `a` via ld = 3.
        let mut d = [0.0; 4];
        matmul_into(MatRef::strided(&a, 2, 2, 3), MatRef::new(&b[..4], 2, 2), &mut d, 2, false);
        assert_eq!(d, [1.0, 2.0, 4.0, 5.0]);
    }
}

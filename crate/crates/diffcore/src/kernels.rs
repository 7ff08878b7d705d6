//! Raw dense kernels. All buffers are row-major.

/// Strided matrix view description for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = op(a) * op(b) + beta * out`, `out` is `m x n` row-major.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, out: &mut [f64], beta: f64) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner extent mismatch");
    assert_eq!(out.len(), m * n, "gemm output size mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: extents and strides describe in-bounds accesses of the
    // slices checked above; `out` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold `x[batch, c_in, len]` into columns `[c_in * width, batch * len]`
/// with symmetric zero padding.
pub(crate) fn im2col(x: &[f64], batch: usize, c_in: usize, len: usize, width: usize) -> Vec<f64> {
    let pad = (width - 1) / 2;
    let ncols = batch * len;
    let mut cols = vec![0.0; c_in * width * ncols];
    for c in 0..c_in {
        for j in 0..width {
            let row = (c * width + j) * ncols;
            for b in 0..batch {
                let src = &x[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                let dst = &mut cols[row + b * len..row + (b + 1) * len];
                for (t, d) in dst.iter_mut().enumerate() {
                    let s = t + j;
                    if s >= pad && s - pad < len {
                        *d = src[s - pad];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into `dx[batch, c_in, len]`.
pub(crate) fn col2im(
    cols: &[f64],
    dx: &mut [f64],
    batch: usize,
    c_in: usize,
    len: usize,
    width: usize,
) {
    let pad = (width - 1) / 2;
    let ncols = batch * len;
    for c in 0..c_in {
        for j in 0..width {
            let row = (c * width + j) * ncols;
            for b in 0..batch {
                let src = &cols[row + b * len..row + (b + 1) * len];
                let dst = &mut dx[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                for (t, s) in src.iter().enumerate() {
                    let p = t + j;
                    if p >= pad && p - pad < len {
                        dst[p - pad] += s;
                    }
                }
            }
        }
    }
}

/// `[c, batch * len]` (channel-major) to `[batch, c, len]`.
pub(crate) fn channel_major_to_batch_major(y: &[f64], batch: usize, c: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for o in 0..c {
        for b in 0..batch {
            let src = &y[o * batch * len + b * len..o * batch * len + (b + 1) * len];
            out[(b * c + o) * len..(b * c + o + 1) * len].copy_from_slice(src);
        }
    }
    out
}

pub(crate) fn batch_major_to_channel_major(y: &[f64], batch: usize, c: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for b in 0..batch {
        for o in 0..c {
            let src = &y[(b * c + o) * len..(b * c + o + 1) * len];
            out[o * batch * len + b * len..o * batch * len + (b + 1) * len].copy_from_slice(src);
        }
    }
    out
}

//! Raw numeric kernels shared by the forward and backward passes.

/// `c = a · b + beta · c` for row-major operands, with optional transposes.
///
/// `a` is logically `m×k` and `b` is `k×n` after the transposes are applied.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices above hold exactly the extents described by the
    // strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a strided 1-D convolution window.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub batch: usize,
    pub channels: usize,
    /// Length of the signal being windowed.
    pub length: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Number of window positions.
    pub positions: usize,
}

impl Window {
    fn source(&self, pos: usize, k: usize) -> Option<usize> {
        let idx = (pos * self.stride + k) as isize - self.padding as isize;
        (idx >= 0 && (idx as usize) < self.length).then_some(idx as usize)
    }

    pub fn cols_len(&self) -> usize {
        self.batch * self.positions * self.channels * self.kernel
    }
}

/// Unfold `(batch, channels, length)` into rows `(batch·positions)` of
/// `(channels·kernel)` patches. Out-of-range taps read zero.
pub(crate) fn im2col(x: &[f64], w: Window) -> Vec<f64> {
    let width = w.channels * w.kernel;
    let mut cols = vec![0.0; w.cols_len()];
    for n in 0..w.batch {
        for pos in 0..w.positions {
            let row = &mut cols[(n * w.positions + pos) * width..][..width];
            for c in 0..w.channels {
                let signal = &x[(n * w.channels + c) * w.length..][..w.length];
                for k in 0..w.kernel {
                    if let Some(src) = w.source(pos, k) {
                        row[c * w.kernel + k] = signal[src];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patches back into a signal buffer.
pub(crate) fn col2im(cols: &[f64], w: Window, out: &mut [f64]) {
    let width = w.channels * w.kernel;
    for n in 0..w.batch {
        for pos in 0..w.positions {
            let row = &cols[(n * w.positions + pos) * width..][..width];
            for c in 0..w.channels {
                let signal = &mut out[(n * w.channels + c) * w.length..][..w.length];
                for k in 0..w.kernel {
                    if let Some(src) = w.source(pos, k) {
                        signal[src] += row[c * w.kernel + k];
                    }
                }
            }
        }
    }
}

/// `(batch, channels, length)` → `(batch·length, channels)`.
pub(crate) fn channels_last(x: &[f64], batch: usize, channels: usize, length: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for n in 0..batch {
        for c in 0..channels {
            for l in 0..length {
                out[(n * length + l) * channels + c] = x[(n * channels + c) * length + l];
            }
        }
    }
    out
}

/// Inverse of [`channels_last`].
pub(crate) fn channels_first(x: &[f64], batch: usize, channels: usize, length: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for n in 0..batch {
        for c in 0..channels {
            for l in 0..length {
                out[(n * channels + c) * length + l] = x[(n * length + l) * channels + c];
            }
        }
    }
    out
}

/// Split a shape around `axis` into `(outer, extent, inner)`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

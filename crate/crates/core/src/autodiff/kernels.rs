//! Raw numeric kernels shared by forward and backward passes.

use alloc::vec;
use alloc::vec::Vec;

/// Row-major matrix view: data plus (row stride, column stride).
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Mat<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// The transpose of a row-major `rows × cols` matrix.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }

    fn fits(&self, m: usize, n: usize) -> bool {
        m == 0 || n == 0 || (m - 1) * self.rs + (n - 1) * self.cs < self.data.len()
    }
}

/// `c = a · b (+ c if accumulate)` with `a: m×k`, `b: k×n`, `c: m×n` row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Mat, b: Mat, c: &mut [f64], accumulate: bool) {
    assert!(a.fits(m, k) && b.fits(k, n) && c.len() >= m * n, "gemm operand bounds");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: every operand was bounds-checked above against its strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Range of output columns `ow` whose input column `ow·stride + k − pad` lies inside `[0, len)`.
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k { ((len + pad - k - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfold one `C×H×W` image into the `(C·kh·kw) × (out_h·out_w)` block of a
/// column matrix whose rows are `ld` apart.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64], ld: usize) {
    let p = g.col_cols();
    for c in 0..g.channels {
        for ki in 0..g.kh {
            let (oh_lo, oh_hi) = valid_range(ki, g.pad, g.stride, g.height, g.out_h);
            for kj in 0..g.kw {
                let (ow_lo, ow_hi) = valid_range(kj, g.pad, g.stride, g.width, g.out_w);
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * ld..row * ld + p];
                dst[..oh_lo * g.out_w].fill(0.0);
                dst[oh_hi * g.out_w..].fill(0.0);
                for oh in oh_lo..oh_hi {
                    let ih = oh * g.stride + ki - g.pad;
                    let line = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    line[..ow_lo].fill(0.0);
                    line[ow_hi..].fill(0.0);
                    let src = &x[(c * g.height + ih) * g.width..][..g.width];
                    let first = ow_lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        line[ow_lo..ow_hi].copy_from_slice(&src[first..first + ow_hi - ow_lo]);
                    } else {
                        for (slot, v) in line[ow_lo..ow_hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *slot = *v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a column block back into an image.
pub(crate) fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64], ld: usize) {
    let p = g.col_cols();
    for c in 0..g.channels {
        for ki in 0..g.kh {
            let (oh_lo, oh_hi) = valid_range(ki, g.pad, g.stride, g.height, g.out_h);
            for kj in 0..g.kw {
                let (ow_lo, ow_hi) = valid_range(kj, g.pad, g.stride, g.width, g.out_w);
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * ld..row * ld + p];
                for oh in oh_lo..oh_hi {
                    let ih = oh * g.stride + ki - g.pad;
                    let dst = &mut dx[(c * g.height + ih) * g.width..][..g.width];
                    let line = &src[oh * g.out_w + ow_lo..oh * g.out_w + ow_hi];
                    let first = ow_lo * g.stride + kj - g.pad;
                    for (v, d) in line.iter().zip(dst[first..].iter_mut().step_by(g.stride)) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Images per column-matrix chunk, keeping the unfolded buffer near 32 MB.
fn chunk_len(n: usize, g: &ConvGeom) -> usize {
    const BUDGET: usize = 1 << 22;
    (BUDGET / (g.col_rows() * g.col_cols()).max(1)).clamp(1, n.max(1))
}

/// Batched convolution forward: `x: N×C×H×W`, `w: O×C×kh×kw`.
pub(crate) fn conv_forward(x: &[f64], w: &[f64], n: usize, out_ch: usize, g: &ConvGeom) -> Vec<f64> {
    let in_sz = g.channels * g.height * g.width;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let out_sz = out_ch * cols;
    let mut out = vec![0.0; n * out_sz];
    let chunk = chunk_len(n, g);
    let mut col = vec![0.0; rows * cols * chunk];
    let mut prod = vec![0.0; out_ch * cols * chunk];
    for start in (0..n).step_by(chunk) {
        let m = chunk.min(n - start);
        let ld = m * cols;
        for s in 0..m {
            let img = &x[(start + s) * in_sz..(start + s + 1) * in_sz];
            im2col(img, g, &mut col[s * cols..], ld);
        }
        gemm(out_ch, rows, ld, Mat::rows(w, rows), Mat::rows(&col, ld), &mut prod, false);
        for s in 0..m {
            let dst = &mut out[(start + s) * out_sz..(start + s + 1) * out_sz];
            for o in 0..out_ch {
                dst[o * cols..(o + 1) * cols].copy_from_slice(&prod[o * ld + s * cols..o * ld + (s + 1) * cols]);
            }
        }
    }
    out
}

/// Batched convolution backward. Returns `(dx, dw)`, each only when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    n: usize,
    out_ch: usize,
    g: &ConvGeom,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let in_sz = g.channels * g.height * g.width;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let out_sz = out_ch * cols;
    let mut dx = want_dx.then(|| vec![0.0; x.len()]);
    let mut dw = want_dw.then(|| vec![0.0; w.len()]);
    let chunk = chunk_len(n, g);
    let mut col = vec![0.0; rows * cols * chunk];
    let mut grad = vec![0.0; out_ch * cols * chunk];
    for start in (0..n).step_by(chunk) {
        let m = chunk.min(n - start);
        let ld = m * cols;
        // gather dout into O × (m·cols)
        for s in 0..m {
            let src = &dout[(start + s) * out_sz..(start + s + 1) * out_sz];
            for o in 0..out_ch {
                grad[o * ld + s * cols..o * ld + (s + 1) * cols].copy_from_slice(&src[o * cols..(o + 1) * cols]);
            }
        }
        if let Some(dw) = dw.as_mut() {
            for s in 0..m {
                let img = &x[(start + s) * in_sz..(start + s + 1) * in_sz];
                im2col(img, g, &mut col[s * cols..], ld);
            }
            gemm(out_ch, ld, rows, Mat::rows(&grad, ld), Mat::transposed(&col, ld), dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(rows, out_ch, ld, Mat::transposed(w, rows), Mat::rows(&grad, ld), &mut col, false);
            for s in 0..m {
                col2im(&col[s * cols..], g, &mut dx[(start + s) * in_sz..(start + s + 1) * in_sz], ld);
            }
        }
    }
    (dx, dw)
}

/// Split a shape around `axis` into (outer, axis length, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

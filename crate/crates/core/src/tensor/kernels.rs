//! Slice-level numeric kernels shared by the recorded ops and plain helpers.

use crate::error::{AidError, Result};

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
        return Err(AidError::dim("matmul", a, b));
    }
    Ok((a[0], a[1], b[1]))
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`
pub(crate) fn matmul_abt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            out[i * k + p] += dot(a_row, b_row);
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn matmul_atb_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            axpy(av, b_row, &mut out[p * n..(p + 1) * n]);
        }
    }
}

pub(crate) fn transpose(src: &[f64], dst: &mut [f64], rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators; fixed association keeps results reproducible.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Geometry of a single-image 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], b: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 3 || w.len() != 4 || x[0] != w[1] {
            return Err(AidError::dim("conv2d", x, w));
        }
        if b != [w[0]] {
            return Err(AidError::dim("conv2d bias", w, b));
        }
        let (kh, kw) = (w[2], w[3]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(AidError::Config(format!(
                "conv2d kernel {kh}x{kw} must have odd extents"
            )));
        }
        if stride == 0 {
            return Err(AidError::Config("conv2d stride must be >= 1".into()));
        }
        let out_extent = |n: usize, k: usize| -> Result<usize> {
            let span = n + 2 * pad;
            if span < k || (span - k) % stride != 0 {
                return Err(AidError::Config(format!(
                    "conv2d output size ({n}+2*{pad}-{k})/{stride}+1 is not integral"
                )));
            }
            Ok((span - k) / stride + 1)
        };
        Ok(ConvGeom {
            c: x[0],
            h: x[1],
            w: x[2],
            o: w[0],
            kh,
            kw,
            stride,
            pad,
            oh: out_extent(x[1], kh)?,
            ow: out_extent(x[2], kw)?,
        })
    }

    /// Output columns `[x0, x1)` whose input column `x*stride + kx - pad` is in bounds.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx {
            (self.pad - kx).div_ceil(self.stride)
        } else {
            0
        };
        // need x*stride + kx - pad <= w - 1
        let limit = self.w + self.pad;
        let hi = if limit > kx {
            ((limit - kx - 1) / self.stride + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    #[inline]
    fn row_range(&self, ky: usize) -> (usize, usize) {
        let lo = if self.pad > ky {
            (self.pad - ky).div_ceil(self.stride)
        } else {
            0
        };
        let limit = self.h + self.pad;
        let hi = if limit > ky {
            ((limit - ky - 1) / self.stride + 1).min(self.oh)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let plane = g.oh * g.ow;
    for o in 0..g.o {
        out[o * plane..(o + 1) * plane].fill(b[o]);
    }
    for o in 0..g.o {
        for c in 0..g.c {
            for ky in 0..g.kh {
                let (y0, y1) = g.row_range(ky);
                for kx in 0..g.kw {
                    let wv = w[((o * g.c + c) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = g.col_range(kx);
                    for y in y0..y1 {
                        let iy = y * g.stride + ky - g.pad;
                        let in_row = &x[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                        let out_row = &mut out[(o * g.oh + y) * g.ow..(o * g.oh + y + 1) * g.ow];
                        if g.stride == 1 {
                            let ix0 = x0 + kx - g.pad;
                            axpy(wv, &in_row[ix0..ix0 + (x1 - x0)], &mut out_row[x0..x1]);
                        } else {
                            for xo in x0..x1 {
                                out_row[xo] += wv * in_row[xo * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input, weight and bias gradients of a convolution.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let plane = g.oh * g.ow;
    if let Some(db) = db {
        for o in 0..g.o {
            db[o] += grad_out[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
    }
    for o in 0..g.o {
        for c in 0..g.c {
            for ky in 0..g.kh {
                let (y0, y1) = g.row_range(ky);
                for kx in 0..g.kw {
                    let widx = ((o * g.c + c) * g.kh + ky) * g.kw + kx;
                    let wv = w[widx];
                    let (x0, x1) = g.col_range(kx);
                    let mut wacc = 0.0;
                    for y in y0..y1 {
                        let iy = y * g.stride + ky - g.pad;
                        let row_start = (c * g.h + iy) * g.w;
                        let go_row = &grad_out[(o * g.oh + y) * g.ow..(o * g.oh + y + 1) * g.ow];
                        if g.stride == 1 {
                            let ix0 = x0 + kx - g.pad;
                            let n = x1 - x0;
                            if dw.is_some() {
                                wacc += dot(&go_row[x0..x1], &x[row_start + ix0..row_start + ix0 + n]);
                            }
                            if let Some(dx) = dx.as_deref_mut() {
                                if wv != 0.0 {
                                    axpy(wv, &go_row[x0..x1], &mut dx[row_start + ix0..row_start + ix0 + n]);
                                }
                            }
                        } else {
                            for xo in x0..x1 {
                                let ix = row_start + xo * g.stride + kx - g.pad;
                                wacc += go_row[xo] * x[ix];
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[ix] += wv * go_row[xo];
                                }
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[widx] += wacc;
                    }
                }
            }
        }
    }
}

/// Splits `shape` around `axis` into `(outer, len, inner)` extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward(x: &[f64], out: &mut [f64], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for l in 0..len {
                max = max.max(x[base + l * inner]);
            }
            let mut sum = 0.0;
            for l in 0..len {
                let e = (x[base + l * inner] - max).exp();
                out[base + l * inner] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for l in 0..len {
                out[base + l * inner] *= inv;
            }
        }
    }
}

/// `dx += y ∘ (g − Σ g∘y)` per slice.
pub(crate) fn softmax_backward(
    y: &[f64],
    grad: &[f64],
    dx: &mut [f64],
    outer: usize,
    len: usize,
    inner: usize,
) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut s = 0.0;
            for l in 0..len {
                s += grad[base + l * inner] * y[base + l * inner];
            }
            for l in 0..len {
                let idx = base + l * inner;
                dx[idx] += y[idx] * (grad[idx] - s);
            }
        }
    }
}

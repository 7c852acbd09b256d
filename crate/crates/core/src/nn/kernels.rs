//! Per-sample kernels shared by the layer forward and backward passes.

use super::real::gemm;
use super::Real;

/// Geometry of a strided, padded square-kernel window from an `h×w` input
/// to an `ho×wo` output.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    #[inline]
    fn source(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let p = (o * self.stride + kk) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < limit).then_some(p as usize)
    }
}

/// `cols[(c·k + ky)·k + kx, oy·wo + ox] = x[c, oy·s − p + ky, ox·s − p + kx]`.
pub(crate) fn im2col<T: Real>(x: &[T], g: &Window, cols: &mut [T]) {
    let n = g.cols();
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let sy = g.source(oy, ky, g.h);
                    for ox in 0..g.wo {
                        dst[oy * g.wo + ox] = match (sy, g.source(ox, kx, g.w)) {
                            (Some(y), Some(x_)) => x[(c * g.h + y) * g.w + x_],
                            _ => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatters-adds columns back into `x`.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &Window, x: &mut [T]) {
    let n = g.cols();
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let Some(y) = g.source(oy, ky, g.h) else { continue };
                    for ox in 0..g.wo {
                        if let Some(x_) = g.source(ox, kx, g.w) {
                            x[(c * g.h + y) * g.w + x_] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Same-size convolution with odd kernel `k`: `y = W · im2col(x) + b`.
pub(crate) fn conv_forward<T: Real>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    cout: usize,
    k: usize,
    y: &mut [T],
) {
    let n = h * w;
    let g = Window {
        c: cin,
        h,
        w,
        k,
        stride: 1,
        pad: k / 2,
        ho: h,
        wo: w,
    };
    if k == 1 {
        gemm(cout, cin, n, weight, false, x, false, y, T::zero());
    } else {
        let mut cols = vec![T::zero(); g.rows() * n];
        im2col(x, &g, &mut cols);
        gemm(cout, g.rows(), n, weight, false, &cols, false, y, T::zero());
    }
    for co in 0..cout {
        for v in &mut y[co * n..(co + 1) * n] {
            *v += bias[co];
        }
    }
}

/// Accumulates weight and bias gradients and writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    k: usize,
    dy: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
) {
    let n = h * w;
    for co in 0..cout {
        dbias[co] += dy[co * n..(co + 1) * n].iter().copied().sum::<T>();
    }
    if k == 1 {
        gemm(cout, n, cin, dy, false, x, true, dweight, T::one());
        gemm(cin, cout, n, weight, true, dy, false, dx, T::zero());
        return;
    }
    let g = Window {
        c: cin,
        h,
        w,
        k,
        stride: 1,
        pad: k / 2,
        ho: h,
        wo: w,
    };
    let mut cols = vec![T::zero(); g.rows() * n];
    im2col(x, &g, &mut cols);
    gemm(cout, n, g.rows(), dy, false, &cols, true, dweight, T::one());
    gemm(g.rows(), cout, n, weight, true, dy, false, &mut cols, T::zero());
    dx.iter_mut().for_each(|v| *v = T::zero());
    col2im(&cols, &g, dx);
}

/// Window of the 4×4, stride-2, pad-1 transposed convolution, expressed as
/// the forward convolution from the `2h×2w` output back to `h×w`.
fn tconv_window(cout: usize, h: usize, w: usize) -> Window {
    Window {
        c: cout,
        h: 2 * h,
        w: 2 * w,
        k: 4,
        stride: 2,
        pad: 1,
        ho: h,
        wo: w,
    }
}

/// `weight` is `[cin, cout·16]`.
pub(crate) fn tconv_forward<T: Real>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    cout: usize,
    y: &mut [T],
) {
    let g = tconv_window(cout, h, w);
    let n = h * w;
    let mut cols = vec![T::zero(); g.rows() * n];
    gemm(g.rows(), cin, n, weight, true, x, false, &mut cols, T::zero());
    y.iter_mut().for_each(|v| *v = T::zero());
    col2im(&cols, &g, y);
    let m = 4 * n;
    for co in 0..cout {
        for v in &mut y[co * m..(co + 1) * m] {
            *v += bias[co];
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn tconv_backward<T: Real>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    dy: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
) {
    let g = tconv_window(cout, h, w);
    let n = h * w;
    let m = 4 * n;
    for co in 0..cout {
        dbias[co] += dy[co * m..(co + 1) * m].iter().copied().sum::<T>();
    }
    let mut cols = vec![T::zero(); g.rows() * n];
    im2col(dy, &g, &mut cols);
    gemm(cin, g.rows(), n, weight, false, &cols, false, dx, T::zero());
    gemm(cin, n, g.rows(), x, false, &cols, true, dweight, T::one());
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub(crate) const RMS_EPS: f64 = 1e-6;

/// Root-mean-square normalization over each channel group of one sample.
pub(crate) fn rms_forward<T: Real>(x: &[T], c: usize, plane: usize, groups: usize, gain: &[T], y: &mut [T]) {
    let cg = c / groups;
    let len = cg * plane;
    for g in 0..groups {
        let xs = &x[g * len..(g + 1) * len];
        let ms = xs.iter().map(|v| v.f64() * v.f64()).sum::<f64>() / len as f64;
        let inv = T::of(1.0 / (ms + RMS_EPS).sqrt());
        for ci in 0..cg {
            let ch = g * cg + ci;
            for p in 0..plane {
                let i = ch * plane + p;
                y[i] = x[i] * inv * gain[ch];
            }
        }
    }
}

pub(crate) fn rms_backward<T: Real>(
    x: &[T],
    c: usize,
    plane: usize,
    groups: usize,
    gain: &[T],
    dy: &[T],
    dgain: &mut [T],
    dx: &mut [T],
) {
    let cg = c / groups;
    let len = cg * plane;
    for g in 0..groups {
        let xs = &x[g * len..(g + 1) * len];
        let ms = xs.iter().map(|v| v.f64() * v.f64()).sum::<f64>() / len as f64;
        let r = (ms + RMS_EPS).sqrt();
        let mut dot = 0.0;
        for ci in 0..cg {
            let ch = g * cg + ci;
            let mut dg = 0.0;
            for p in 0..plane {
                let i = ch * plane + p;
                dg += dy[i].f64() * x[i].f64();
                dot += gain[ch].f64() * dy[i].f64() * x[i].f64();
            }
            dgain[ch] += T::of(dg / r);
        }
        let k = dot / (len as f64 * r * r * r);
        for ci in 0..cg {
            let ch = g * cg + ci;
            for p in 0..plane {
                let i = ch * plane + p;
                dx[i] = T::of(gain[ch].f64() * dy[i].f64() / r - x[i].f64() * k);
            }
        }
    }
}

/// Masked row softmax over the first `len` of `cols` entries; the rest are 0.
pub(crate) fn softmax_rows<T: Real>(s: &mut [T], cols: usize, len: usize) {
    for row in s.chunks_mut(cols) {
        let max = row[..len].iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in &mut row[..len] {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in &mut row[..len] {
            *v = *v / sum;
        }
        for v in &mut row[len..] {
            *v = T::zero();
        }
    }
}

//! 3×3 cross-correlation with circular padding on `(C, H, W)` planes.
//!
//! `y[o, m, n] = b[o] + Σ_{i, ky, kx} w[o, i, ky, kx] · x[i, m + ky - 1, n + kx - 1]`
//! with indices taken modulo `H` and `W`.

use crate::tensor::Scalar;

/// Circularly pads every `h × w` plane by one pixel on each side.
fn pad_circular<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![T::zero(); planes * ph * pw];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ph * pw..(p + 1) * ph * pw];
        for r in 0..ph {
            let sr = (r + h - 1) % h;
            let row = &src[sr * w..(sr + 1) * w];
            let drow = &mut dst[r * pw..(r + 1) * pw];
            drow[0] = row[w - 1];
            drow[1..=w].copy_from_slice(row);
            drow[w + 1] = row[0];
        }
    }
    out
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
}

pub(crate) fn forward<T: Scalar>(s: &ConvShape, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let (h, w, pw) = (s.h, s.w, s.w + 2);
    let xp = pad_circular(x, s.c_in, h, w);
    let plane_p = (h + 2) * pw;
    let mut out = vec![T::zero(); s.c_out * h * w];
    for o in 0..s.c_out {
        let y = &mut out[o * h * w..(o + 1) * h * w];
        y.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..s.c_in {
            let xi = &xp[i * plane_p..(i + 1) * plane_p];
            let k = &weight[(o * s.c_in + i) * 9..(o * s.c_in + i + 1) * 9];
            for m in 0..h {
                let yrow = &mut y[m * w..(m + 1) * w];
                for ky in 0..3 {
                    let xrow = &xi[(m + ky) * pw..(m + ky + 1) * pw];
                    axpy(k[ky * 3], &xrow[0..w], yrow);
                    axpy(k[ky * 3 + 1], &xrow[1..w + 1], yrow);
                    axpy(k[ky * 3 + 2], &xrow[2..w + 2], yrow);
                }
            }
        }
    }
    out
}

/// Returns `(d_input, d_weight, d_bias)`.
pub(crate) fn backward<T: Scalar>(s: &ConvShape, x: &[T], weight: &[T], dy: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (h, w, pw) = (s.h, s.w, s.w + 2);
    let plane_p = (h + 2) * pw;
    let xp = pad_circular(x, s.c_in, h, w);
    let dyp = pad_circular(dy, s.c_out, h, w);

    let mut d_bias = vec![T::zero(); s.c_out];
    let mut d_weight = vec![T::zero(); weight.len()];
    for o in 0..s.c_out {
        let g = &dy[o * h * w..(o + 1) * h * w];
        d_bias[o] = g.iter().copied().sum();
        for i in 0..s.c_in {
            let xi = &xp[i * plane_p..(i + 1) * plane_p];
            let dk = &mut d_weight[(o * s.c_in + i) * 9..(o * s.c_in + i + 1) * 9];
            for m in 0..h {
                let grow = &g[m * w..(m + 1) * w];
                for ky in 0..3 {
                    let xrow = &xi[(m + ky) * pw..(m + ky + 1) * pw];
                    for kx in 0..3 {
                        dk[ky * 3 + kx] += dot(grow, &xrow[kx..kx + w]);
                    }
                }
            }
        }
    }

    // d_x[i, p, q] = Σ w[o, i, ky, kx] · dy[o, p - ky + 1, q - kx + 1]
    let mut d_input = vec![T::zero(); s.c_in * h * w];
    for i in 0..s.c_in {
        let dx = &mut d_input[i * h * w..(i + 1) * h * w];
        for o in 0..s.c_out {
            let gp = &dyp[o * plane_p..(o + 1) * plane_p];
            let k = &weight[(o * s.c_in + i) * 9..(o * s.c_in + i + 1) * 9];
            for p in 0..h {
                let drow = &mut dx[p * w..(p + 1) * w];
                for ky in 0..3 {
                    let grow = &gp[(p + 2 - ky) * pw..(p + 3 - ky) * pw];
                    for kx in 0..3 {
                        axpy(k[ky * 3 + kx], &grow[2 - kx..2 - kx + w], drow);
                    }
                }
            }
        }
    }
    (d_input, d_weight, d_bias)
}

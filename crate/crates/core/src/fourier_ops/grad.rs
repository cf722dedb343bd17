//! Analytic reverse pass of the Fourier token-mix block.
//!
//! `rfft2` and `irfft2` are real-linear maps between `R^{HW}` and the
//! `(re, im)` planes of the half spectrum. With `c_v = 1` on the DC column
//! (and the Nyquist column for even `W`) and `c_v = 2` elsewhere:
//!
//! ```text
//! irfft2ᵀ(g) = (c_v / HW) · rfft2(g)
//! rfft2ᵀ(G)  = HW · irfft2(G / c_v)
//! ```

use super::{detokenize, params::FourierSRParams, ForwardTrace, TokenView};
use crate::error::{Error, Result};
use crate::fft::{half_width, irfft2, rfft2, Spectrum2D};
use crate::tensor::{ComplexTensor, Scalar, Tensor};

/// Gradients of a scalar loss with respect to the block's input and every
/// learnable tensor.
#[derive(Debug, Clone)]
pub struct FourierSRGrads<T: Scalar = f64> {
    pub input: Tensor<T>,
    pub omega_m: Tensor<T>,
    pub omega_u: ComplexTensor<T>,
    pub omega_l: ComplexTensor<T>,
    pub fuse_a: Tensor<T>,
    pub fuse_b: Tensor<T>,
}

fn column_weight(v: usize, w: usize) -> f64 {
    if v == 0 || (w.is_multiple_of(2) && v == w / 2) {
        1.0
    } else {
        2.0
    }
}

/// Adjoint of `irfft2` over `(C, H, W)` real input.
fn irfft2_adjoint<T: Scalar>(g: &Tensor<T>) -> Result<ComplexTensor<T>> {
    let w = g.shape()[2];
    let h = g.shape()[1];
    let wh = half_width(w);
    let s = rfft2(g)?;
    let (mut re, mut im) = s.data.into_parts();
    let hw = (h * w) as f64;
    for (k, (r, i)) in re.data_mut().iter_mut().zip(im.data_mut().iter_mut()).enumerate() {
        let f = T::of(column_weight(k % wh, w) / hw);
        *r *= f;
        *i *= f;
    }
    ComplexTensor::new(re, im)
}

/// Adjoint of `rfft2` for a `(C, H, W/2+1)` spectrum gradient.
fn rfft2_adjoint<T: Scalar>(g: ComplexTensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let wh = half_width(w);
    let hw = (h * w) as f64;
    let (mut re, mut im) = g.into_parts();
    for (k, (r, i)) in re.data_mut().iter_mut().zip(im.data_mut().iter_mut()).enumerate() {
        let f = T::of(hw / column_weight(k % wh, w));
        *r *= f;
        *i *= f;
    }
    irfft2(&Spectrum2D::new(ComplexTensor::new(re, im)?, w)?, h, w)
}

struct FilterGrad<T: Scalar> {
    tokens: ComplexTensor<T>,
    omega: ComplexTensor<T>,
}

/// Reverse of `out = ω ⊙ t` (or `ω ⊙ conj(t)` when `conjugate`), per token.
fn filter_adjoint<T: Scalar>(
    omega: &ComplexTensor<T>,
    t: &ComplexTensor<T>,
    d_out: &ComplexTensor<T>,
    conjugate: bool,
) -> Result<FilterGrad<T>> {
    let tokens = omega.numel();
    let plane = t.numel() / tokens;
    let mut d_t = ComplexTensor::zeros(t.shape());
    let mut d_wr = vec![T::zero(); tokens];
    let mut d_wi = vec![T::zero(); tokens];
    let sign = if conjugate { -T::one() } else { T::one() };
    {
        let (tr, ti) = (t.re().data(), t.im().data());
        let (gr, gi) = (d_out.re().data(), d_out.im().data());
        let (out_r, out_i) = d_t.planes_mut();
        for k in 0..tokens {
            let (wr, wi) = (omega.re().data()[k], omega.im().data()[k]);
            let (mut acc_r, mut acc_i) = (T::zero(), T::zero());
            for idx in k * plane..(k + 1) * plane {
                // Effective multiplicand t' is t or conj(t).
                let (ar, ai) = (tr[idx], sign * ti[idx]);
                let (dr, di) = (gr[idx], gi[idx]);
                acc_r += dr * ar + di * ai;
                acc_i += di * ar - dr * ai;
                // dt' = conj(ω)·d_out; dt = dt' or conj(dt').
                out_r[idx] = wr * dr + wi * di;
                out_i[idx] = sign * (wr * di - wi * dr);
            }
            d_wr[k] = acc_r;
            d_wi[k] = acc_i;
        }
    }
    let shape = omega.shape();
    Ok(FilterGrad {
        tokens: d_t,
        omega: ComplexTensor::new(Tensor::new(shape, d_wr)?, Tensor::new(shape, d_wi)?)?,
    })
}

/// Backpropagates `d_out` (gradient w.r.t. the block output) through one
/// forward evaluation recorded in `trace`.
pub fn fourier_sr_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &FourierSRParams<T>,
    trace: &ForwardTrace<T>,
    d_out: &Tensor<T>,
) -> Result<FourierSRGrads<T>> {
    if d_out.shape() != x.shape() {
        return Err(Error::dim("fourier_sr_backward", d_out.shape(), x.shape()));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let plane = h * w;

    let mut d_a = vec![T::zero(); c];
    let mut d_b = vec![T::zero(); c];
    let mut g_upper = vec![T::zero(); x.numel()];
    let mut g_lower = vec![T::zero(); x.numel()];
    for ch in 0..c {
        let (a, b) = (p.fuse_a.data()[ch], p.fuse_b.data()[ch]);
        for k in ch * plane..(ch + 1) * plane {
            let g = d_out.data()[k];
            d_a[ch] += g * trace.upper.data()[k];
            d_b[ch] += g * trace.lower.data()[k];
            g_upper[k] = a * g;
            g_lower[k] = b * g;
        }
    }

    let token_shape = trace.mixed.tokens.shape().to_vec();
    let d_upper = irfft2_adjoint(&Tensor::new(x.shape(), g_upper)?)?.into_reshape(&token_shape)?;
    let d_lower = irfft2_adjoint(&Tensor::new(x.shape(), g_lower)?)?.into_reshape(&token_shape)?;

    let up = filter_adjoint(p.omega_u(), &trace.mixed.tokens, &d_upper, true)?;
    let low = filter_adjoint(p.omega_l(), &trace.mixed.tokens, &d_lower, false)?;
    let d_mixed = up.tokens.add(&low.tokens)?;

    // Channel mix: out[g, j] = Σ_i m[g, j, i] · in[g, i].
    let (rho, group) = (p.rho(), p.group_size());
    let spec_plane = h * half_width(w);
    let mut d_tokens = ComplexTensor::zeros(&token_shape);
    let mut d_m = vec![T::zero(); rho * group * group];
    {
        let tin = &trace.tokens.tokens;
        let (dr, di) = d_tokens.planes_mut();
        let (gr, gi) = (d_mixed.re().data(), d_mixed.im().data());
        let (ir, ii) = (tin.re().data(), tin.im().data());
        let m = p.omega_m.data();
        for g in 0..rho {
            for j in 0..group {
                let out_base = (g * group + j) * spec_plane;
                for i in 0..group {
                    let in_base = (g * group + i) * spec_plane;
                    let weight = m[(g * group + j) * group + i];
                    let mut acc = T::zero();
                    for q in 0..spec_plane {
                        let (yr, yi) = (gr[out_base + q], gi[out_base + q]);
                        acc += yr * ir[in_base + q] + yi * ii[in_base + q];
                        dr[in_base + q] += weight * yr;
                        di[in_base + q] += weight * yi;
                    }
                    d_m[(g * group + j) * group + i] = acc;
                }
            }
        }
    }

    let spectrum = detokenize(&TokenView {
        tokens: d_tokens,
        rho,
        full_width: w,
    })?;
    let mut d_x = rfft2_adjoint(spectrum.data, h, w)?;
    if p.residual {
        d_x = d_x.add(d_out)?;
    }

    Ok(FourierSRGrads {
        input: d_x,
        omega_m: Tensor::new(p.omega_m.shape(), d_m)?,
        omega_u: up.omega,
        omega_l: low.omega,
        fuse_a: Tensor::new(&[c], d_a)?,
        fuse_b: Tensor::new(&[c], d_b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier_ops::fourier_sr_forward_traced;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn transform_adjoints_satisfy_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (h, w) in [(4, 6), (5, 5), (3, 1), (6, 2), (1, 7)] {
            let wh = half_width(w);
            let x = random(&[2, h, w], &mut rng);
            let z = ComplexTensor::new(random(&[2, h, wh], &mut rng), random(&[2, h, wh], &mut rng)).unwrap();
            // <irfft2(z), x> == <z, irfft2ᵀ(x)>
            let lhs = dot(irfft2(&Spectrum2D::new(z.clone(), w).unwrap(), h, w).unwrap().data(), x.data());
            let adj = irfft2_adjoint(&x).unwrap();
            let rhs = dot(z.re().data(), adj.re().data()) + dot(z.im().data(), adj.im().data());
            assert!((lhs - rhs).abs() < 1e-12, "irfft2 adjoint {h}x{w}");
            // <rfft2(x), z> == <x, rfft2ᵀ(z)>
            let s = rfft2(&x).unwrap().data;
            let lhs = dot(s.re().data(), z.re().data()) + dot(s.im().data(), z.im().data());
            let rhs = dot(x.data(), rfft2_adjoint(z, h, w).unwrap().data());
            assert!((lhs - rhs).abs() < 1e-11, "rfft2 adjoint {h}x{w}");
        }
    }

    #[test]
    fn input_gradient_matches_directional_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[4, 6, 6], &mut rng);
        let p = FourierSRParams::random(4, 2, true, &mut rng).unwrap();
        let g = random(&[4, 6, 6], &mut rng);
        let (_, trace) = fourier_sr_forward_traced(&x, &p).unwrap();
        let grads = fourier_sr_backward(&x, &p, &trace, &g).unwrap();
        // The block is affine in x, so one central difference is exact up to rounding.
        let dir = random(&[4, 6, 6], &mut rng);
        let eps = 1e-3;
        let plus = super::super::fourier_sr_forward(&x.add(&dir.scale(eps)).unwrap(), &p).unwrap();
        let minus = super::super::fourier_sr_forward(&x.sub(&dir.scale(eps)).unwrap(), &p).unwrap();
        let numeric = dot(plus.sub(&minus).unwrap().data(), g.data()) / (2.0 * eps);
        let analytic = dot(grads.input.data(), dir.data());
        assert!((numeric - analytic).abs() < 1e-9 * analytic.abs().max(1.0));
    }
}

//! The Fourier token-mix block.
//!
//! Pipeline for an input `x` of shape `(C, H, W)`:
//!
//! ```text
//! S   = rfft2(x)                          (C, H, W/2+1)
//! T   = tokenize(S, ρ)                    (ρ, C/ρ, H, W/2+1)
//! T'  = channel_token_mix(T, ω_m)
//! X_u = irfft2(ω_u ⊙ conj(T'))            flipped global convolution
//! X_l = irfft2(ω_l ⊙ T')                  global convolution
//! y   = fuse_a ⊙ X_u + fuse_b ⊙ X_l  (+ x when residual)
//! ```
//!
//! Because `ω_u` and `ω_l` are constant over frequencies, both branches are
//! circular convolutions with full-image kernels; [`spatial_oracle`]
//! evaluates exactly that without going through the spectrum.

mod grad;
mod params;
mod verify;

pub use grad::{fourier_sr_backward, FourierSRGrads};
pub use params::{FourierSRParams, ENTRY_NAMES};
pub use verify::{
    fft_removed_forward, verify_equivalence, verify_equivalence_with, EquivalenceReport, Pipeline,
    VerifyConfig, NEGATIVE_CONTROL_THRESHOLD,
};

use crate::error::{Error, Result};
use crate::fft::{circular_conv2d, circular_flip, half_width, irfft2, rfft2, Spectrum2D};
use crate::tensor::{broadcast_mul, ComplexTensor, Scalar, Tensor};

pub(crate) use params::check_grouping;

/// Fourier tokens: a `(C, H, W/2+1)` spectrum viewed as `(ρ, C/ρ, H, W/2+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenView<T: Scalar = f64> {
    pub tokens: ComplexTensor<T>,
    pub rho: usize,
    pub full_width: usize,
}

impl<T: Scalar> TokenView<T> {
    pub fn group_size(&self) -> usize {
        self.tokens.shape()[1]
    }

    fn plane_len(&self) -> usize {
        let s = self.tokens.shape();
        s[2] * s[3]
    }
}

/// Which spectral path a filter product feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `ω ⊙ conj(T)`: convolution of the flipped input.
    Upper,
    /// `ω ⊙ T`: convolution of the input.
    Lower,
}

pub fn tokenize<T: Scalar>(s: &Spectrum2D<T>, rho: usize) -> Result<TokenView<T>> {
    let shape = s.shape();
    if shape.len() != 3 {
        return Err(Error::dim("tokenize expects (C, H, W/2+1)", shape, &[]));
    }
    let group = check_grouping(shape[0], rho)?;
    Ok(TokenView {
        tokens: s.data.reshape(&[rho, group, shape[1], shape[2]])?,
        rho,
        full_width: s.full_width,
    })
}

pub fn detokenize<T: Scalar>(tv: &TokenView<T>) -> Result<Spectrum2D<T>> {
    let s = tv.tokens.shape();
    Spectrum2D::new(tv.tokens.reshape(&[s[0] * s[1], s[2], s[3]])?, tv.full_width)
}

/// Applies `out[g, j] = Σ_i mix[g, j, i] · planes[g, i]` to every plane of a
/// `(ρ, C/ρ, plane)` buffer.
fn grouped_mix<T: Scalar>(mix: &Tensor<T>, rho: usize, group: usize, plane: usize, src: &[T], dst: &mut [T]) {
    let m = mix.data();
    for g in 0..rho {
        for j in 0..group {
            let out = &mut dst[(g * group + j) * plane..(g * group + j + 1) * plane];
            out.iter_mut().for_each(|v| *v = T::zero());
            for i in 0..group {
                let w = m[(g * group + j) * group + i];
                let inp = &src[(g * group + i) * plane..(g * group + i + 1) * plane];
                for (o, &v) in out.iter_mut().zip(inp) {
                    *o += w * v;
                }
            }
        }
    }
}

fn check_mix<T: Scalar>(omega_m: &Tensor<T>, rho: usize, group: usize) -> Result<()> {
    if omega_m.shape() != [rho, group, group] {
        return Err(Error::dim("omega_m", omega_m.shape(), &[rho, group, group]));
    }
    Ok(())
}

/// Channel token mix: a real `C/ρ × C/ρ` matrix per group applied to the
/// real and imaginary planes independently.
pub fn channel_token_mix<T: Scalar>(tv: &TokenView<T>, omega_m: &Tensor<T>) -> Result<TokenView<T>> {
    let group = tv.group_size();
    check_mix(omega_m, tv.rho, group)?;
    let plane = tv.plane_len();
    let mut out = ComplexTensor::zeros(tv.tokens.shape());
    let (re, im) = out.planes_mut();
    grouped_mix(omega_m, tv.rho, group, plane, tv.tokens.re().data(), re);
    grouped_mix(omega_m, tv.rho, group, plane, tv.tokens.im().data(), im);
    Ok(TokenView {
        tokens: out,
        rho: tv.rho,
        full_width: tv.full_width,
    })
}

/// The same grouped channel mix applied to a real `(C, H, W)` tensor.
pub fn spatial_channel_mix<T: Scalar>(x: &Tensor<T>, omega_m: &Tensor<T>, rho: usize) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::dim("spatial_channel_mix expects (C, H, W)", x.shape(), &[]));
    }
    let group = check_grouping(x.shape()[0], rho)?;
    check_mix(omega_m, rho, group)?;
    let plane = x.shape()[1] * x.shape()[2];
    let mut out = vec![T::zero(); x.numel()];
    grouped_mix(omega_m, rho, group, plane, x.data(), &mut out);
    Tensor::new(x.shape(), out)
}

/// Multiplies tokens by a per-token filter broadcast over all frequencies.
pub fn filter_product<T: Scalar>(
    tv: &TokenView<T>,
    omega: &ComplexTensor<T>,
    branch: Branch,
) -> Result<TokenView<T>> {
    let s = tv.tokens.shape();
    if omega.shape() != [s[0], s[1]] {
        return Err(Error::dim("filter_product omega", omega.shape(), &s[..2]));
    }
    let filter = omega.reshape(&[s[0], s[1], 1, 1])?;
    let tokens = match branch {
        Branch::Lower => broadcast_mul(&filter, &tv.tokens)?,
        Branch::Upper => broadcast_mul(&filter, &tv.tokens.conj())?,
    };
    Ok(TokenView {
        tokens,
        rho: tv.rho,
        full_width: tv.full_width,
    })
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Scalar = f64> {
    /// Tokens before the channel mix.
    pub tokens: TokenView<T>,
    /// Tokens after the channel mix.
    pub mixed: TokenView<T>,
    /// Upper-branch output `(C, H, W)`.
    pub upper: Tensor<T>,
    /// Lower-branch output `(C, H, W)`.
    pub lower: Tensor<T>,
}

fn check_input<T: Scalar>(x: &Tensor<T>, p: &FourierSRParams<T>) -> Result<(usize, usize, usize)> {
    if x.rank() != 3 || x.shape()[0] != p.channels() {
        return Err(Error::dim(
            "fourier_sr input (C, H, W)",
            x.shape(),
            &[p.channels()],
        ));
    }
    Ok((x.shape()[0], x.shape()[1], x.shape()[2]))
}

/// `y[c] = a[c]·upper[c] + b[c]·lower[c] (+ x[c])`.
pub(crate) fn fuse<T: Scalar>(
    upper: &Tensor<T>,
    lower: &Tensor<T>,
    p: &FourierSRParams<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let c = p.channels();
    let plane = x.numel() / c;
    let mut out = vec![T::zero(); x.numel()];
    for ch in 0..c {
        let (a, b) = (p.fuse_a.data()[ch], p.fuse_b.data()[ch]);
        let range = ch * plane..(ch + 1) * plane;
        let dst = &mut out[range.clone()];
        for ((d, &u), &l) in dst.iter_mut().zip(&upper.data()[range.clone()]).zip(&lower.data()[range.clone()]) {
            *d = a * u + b * l;
        }
        if p.residual {
            for (d, &v) in dst.iter_mut().zip(&x.data()[range]) {
                *d += v;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn fourier_sr_forward_traced<T: Scalar>(
    x: &Tensor<T>,
    p: &FourierSRParams<T>,
) -> Result<(Tensor<T>, ForwardTrace<T>)> {
    let (c, h, w) = check_input(x, p)?;
    let tokens = tokenize(&rfft2(x)?, p.rho())?;
    let mixed = channel_token_mix(&tokens, p.omega_m())?;
    let upper = filter_product(&mixed, p.omega_u(), Branch::Upper)?;
    let lower = filter_product(&mixed, p.omega_l(), Branch::Lower)?;
    let upper = irfft2(&detokenize(&upper)?, h, w)?;
    let lower = irfft2(&detokenize(&lower)?, h, w)?;
    debug_assert_eq!(upper.shape(), &[c, h, w]);
    let y = fuse(&upper, &lower, p, x)?;
    Ok((
        y,
        ForwardTrace {
            tokens,
            mixed,
            upper,
            lower,
        },
    ))
}

/// Forward pass of the block; output shape equals input shape.
///
/// Same map as [`fourier_sr_forward_traced`], but the two branches are fused
/// in the spectrum (`fuse_a`, `fuse_b` are real) so only one inverse
/// transform runs. Results agree with the traced path up to rounding.
pub fn fourier_sr_forward<T: Scalar>(x: &Tensor<T>, p: &FourierSRParams<T>) -> Result<Tensor<T>> {
    let (c, h, w) = check_input(x, p)?;
    let s = rfft2(x)?;
    let plane = h * half_width(w);
    let g = p.group_size();
    let (sre, sim) = (s.data.re().data(), s.data.im().data());
    let m = p.omega_m().data();
    let (ur, ui) = (p.omega_u().re().data(), p.omega_u().im().data());
    let (lr, li) = (p.omega_l().re().data(), p.omega_l().im().data());
    let (fa, fb) = (p.fuse_a().data(), p.fuse_b().data());

    // a·ω_u·conj(y) + b·ω_l·y = (k0·yr + k1·yi) + i(k2·yr + k3·yi)
    let coef: Vec<[T; 4]> = (0..c)
        .map(|ch| {
            let (a, b) = (fa[ch], fb[ch]);
            [
                a * ur[ch] + b * lr[ch],
                a * ui[ch] - b * li[ch],
                a * ui[ch] + b * li[ch],
                b * lr[ch] - a * ur[ch],
            ]
        })
        .collect();
    let mut zre = vec![T::zero(); c * plane];
    let mut zim = vec![T::zero(); c * plane];
    let (mut yr, mut yi) = (vec![T::zero(); g], vec![T::zero(); g]);
    for grp in 0..p.rho() {
        let first = grp * g;
        for t in 0..plane {
            for j in 0..g {
                let row = &m[(first + j) * g..(first + j + 1) * g];
                let (mut ar, mut ai) = (T::zero(), T::zero());
                for (i, &k) in row.iter().enumerate() {
                    ar += k * sre[(first + i) * plane + t];
                    ai += k * sim[(first + i) * plane + t];
                }
                yr[j] = ar;
                yi[j] = ai;
            }
            for j in 0..g {
                let [k0, k1, k2, k3] = coef[first + j];
                let at = (first + j) * plane + t;
                zre[at] = k0 * yr[j] + k1 * yi[j];
                zim[at] = k2 * yr[j] + k3 * yi[j];
            }
        }
    }
    let shape = s.data.shape().to_vec();
    let z = Spectrum2D::new(ComplexTensor::new(Tensor::new(&shape, zre)?, Tensor::new(&shape, zim)?)?, w)?;
    let y = irfft2(&z, h, w)?;
    if p.residual {
        y.add(x)
    } else {
        Ok(y)
    }
}

/// Spatial kernel `(C, H, W)` equivalent to multiplying every frequency of
/// each channel by `omega`.
pub fn global_kernel<T: Scalar>(
    omega: &ComplexTensor<T>,
    h: usize,
    w: usize,
    real_filter_mode: bool,
) -> Result<Tensor<T>> {
    let c = omega.numel();
    if real_filter_mode {
        // A constant real spectrum is a scaled delta at the origin.
        let re = omega.re().data();
        return Ok(Tensor::from_fn(&[c, h, w], |flat| {
            if flat % (h * w) == 0 {
                re[flat / (h * w)]
            } else {
                T::zero()
            }
        }));
    }
    let wh = half_width(w);
    let (re, im) = (omega.re().data(), omega.im().data());
    let spectrum = ComplexTensor::new(
        Tensor::from_fn(&[c, h, wh], |flat| re[flat / (h * wh)]),
        Tensor::from_fn(&[c, h, wh], |flat| im[flat / (h * wh)]),
    )?;
    irfft2(&Spectrum2D::new(spectrum, w)?, h, w)
}

/// Evaluates the block as explicit circular convolutions in the spatial
/// domain: `a ⊙ (flip(X̂) ⊛ k_u) + b ⊙ (X̂ ⊛ k_l)`, with `X̂` the
/// channel-mixed input.
pub fn spatial_oracle<T: Scalar>(x: &Tensor<T>, p: &FourierSRParams<T>) -> Result<Tensor<T>> {
    let (_, h, w) = check_input(x, p)?;
    let mixed = spatial_channel_mix(x, p.omega_m(), p.rho())?;
    let k_u = global_kernel(p.omega_u(), h, w, p.real_filter_mode())?;
    let k_l = global_kernel(p.omega_l(), h, w, p.real_filter_mode())?;
    let upper = circular_conv2d(&circular_flip(&mixed), &k_u)?;
    let lower = circular_conv2d(&mixed, &k_l)?;
    fuse(&upper, &lower, p, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{max_abs_diff, rel_linf};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn random_spectrum(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Spectrum2D {
        let wh = half_width(w);
        Spectrum2D::new(
            ComplexTensor::new(random(&[c, h, wh], rng), random(&[c, h, wh], rng)).unwrap(),
            w,
        )
        .unwrap()
    }

    #[test]
    fn tokenize_groups_channels_row_major() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = random_spectrum(4, 3, 4, &mut rng);
        let tv = tokenize(&s, 2).unwrap();
        assert_eq!(tv.tokens.shape(), &[2, 2, 3, 3]);
        for (g, i, ch) in [(0, 0, 0), (0, 1, 1), (1, 0, 2), (1, 1, 3)] {
            assert_eq!(tv.tokens.re().get(&[g, i, 1, 2]), s.data.re().get(&[ch, 1, 2]));
        }
        let single = tokenize(&s, 1).unwrap();
        assert_eq!(single.tokens.re().data(), s.data.re().data());
        assert!(tokenize(&s, 3).is_err());
    }

    #[test]
    fn tokenize_round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_spectrum(8, 6, 6, &mut rng);
        assert_eq!(s.shape(), &[8, 6, 4]);
        for rho in [1, 2, 4, 8] {
            assert_eq!(detokenize(&tokenize(&s, rho).unwrap()).unwrap(), s);
        }
    }

    #[test]
    fn identity_and_permutation_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tv = tokenize(&random_spectrum(6, 4, 5, &mut rng), 2).unwrap();
        let eye = Tensor::from_fn(&[2, 3, 3], |f| if (f / 3) % 3 == f % 3 { 1.0 } else { 0.0 });
        assert_eq!(channel_token_mix(&tv, &eye).unwrap(), tv);

        // out[g, j] = in[g, perm[j]]
        let perm = [2usize, 0, 1];
        let pm = Tensor::from_fn(&[2, 3, 3], |f| if perm[(f / 3) % 3] == f % 3 { 1.0 } else { 0.0 });
        let out = channel_token_mix(&tv, &pm).unwrap();
        for g in 0..2 {
            for j in 0..3 {
                assert_eq!(
                    out.tokens.im().get(&[g, j, 1, 1]),
                    tv.tokens.im().get(&[g, perm[j], 1, 1])
                );
            }
        }
        assert!(channel_token_mix(&tv, &Tensor::zeros(&[2, 2, 2])).is_err());
    }

    #[test]
    fn channel_mix_commutes_with_fft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[4, 6, 6], &mut rng);
        let mix = random(&[2, 2, 2], &mut rng);
        let a = channel_token_mix(&tokenize(&rfft2(&x).unwrap(), 2).unwrap(), &mix).unwrap();
        let b = tokenize(&rfft2(&spatial_channel_mix(&x, &mix, 2).unwrap()).unwrap(), 2).unwrap();
        assert!(a.tokens.max_abs_diff(&b.tokens).unwrap() < 1e-11);
    }

    #[test]
    fn filter_product_unit_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[4, 5, 6], &mut rng);
        let tv = tokenize(&rfft2(&x).unwrap(), 2).unwrap();
        let ones = ComplexTensor::from_real(Tensor::ones(&[2, 2]));
        assert_eq!(filter_product(&tv, &ones, Branch::Lower).unwrap(), tv);
        let up = filter_product(&tv, &ones, Branch::Upper).unwrap();
        let back = irfft2(&detokenize(&up).unwrap(), 5, 6).unwrap();
        assert!(max_abs_diff(&back, &circular_flip(&x)).unwrap() < 1e-12);
        assert!(filter_product(&tv, &ComplexTensor::zeros(&[2, 3]), Branch::Lower).is_err());
    }

    #[test]
    fn filter_product_matches_materialized_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tv = tokenize(&random_spectrum(4, 3, 6, &mut rng), 2).unwrap();
        let omega = ComplexTensor::new(random(&[2, 2], &mut rng), random(&[2, 2], &mut rng)).unwrap();
        let out = filter_product(&tv, &omega, Branch::Lower).unwrap();
        let plane = 3 * 4;
        for k in 0..tv.tokens.numel() {
            let t = k / plane;
            let (wr, wi) = (omega.re().data()[t], omega.im().data()[t]);
            let (br, bi) = (tv.tokens.re().data()[k], tv.tokens.im().data()[k]);
            assert_eq!(out.tokens.re().data()[k].to_bits(), (wr * br - wi * bi).to_bits());
            assert_eq!(out.tokens.im().data()[k].to_bits(), (wr * bi + wi * br).to_bits());
        }
    }

    #[test]
    fn fused_forward_matches_traced_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (c, rho, h, w, residual) in [(4, 2, 6, 7), (6, 3, 5, 8), (8, 1, 4, 4)].map(|(c, r, h, w)| (c, r, h, w, c != 6)) {
            let x = random(&[c, h, w], &mut rng);
            let p = FourierSRParams::random(c, rho, residual, &mut rng).unwrap();
            let (traced, _) = fourier_sr_forward_traced(&x, &p).unwrap();
            assert!(max_abs_diff(&fourier_sr_forward(&x, &p).unwrap(), &traced).unwrap() < 1e-13);
        }
    }

    #[test]
    fn identity_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&[4, 7, 6], &mut rng);
        let p = FourierSRParams::with_lower_gain(4, 2, 1.0, false).unwrap();
        assert!(max_abs_diff(&fourier_sr_forward(&x, &p).unwrap(), &x).unwrap() < 1e-12);
        assert!(max_abs_diff(&spatial_oracle(&x, &p).unwrap(), &x).unwrap() < 1e-12);
    }

    #[test]
    fn flip_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[4, 6, 5], &mut rng);
        let mut p = FourierSRParams::with_lower_gain(4, 2, 0.0, false).unwrap();
        p.omega_u = ComplexTensor::from_real(Tensor::ones(&[2, 2]));
        p.omega_l = ComplexTensor::zeros(&[2, 2]);
        p.fuse_a = Tensor::ones(&[4]);
        let y = fourier_sr_forward(&x, &p).unwrap();
        assert!(max_abs_diff(&y, &circular_flip(&x)).unwrap() < 1e-12);
    }

    #[test]
    fn real_filter_unit_kernels_are_deltas() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&[4, 5, 5], &mut rng);
        let mut p = FourierSRParams::random(4, 2, false, &mut rng).unwrap();
        p.omega_u = ComplexTensor::from_real(Tensor::ones(&[2, 2]));
        p.omega_l = ComplexTensor::from_real(Tensor::ones(&[2, 2]));
        let p = p.into_real_filter_mode();
        let mixed = spatial_channel_mix(&x, p.omega_m(), 2).unwrap();
        let flipped = circular_flip(&mixed);
        let expected = Tensor::from_fn(x.shape(), |f| {
            let c = f / 25;
            p.fuse_a().data()[c] * flipped.data()[f] + p.fuse_b().data()[c] * mixed.data()[f]
        });
        let oracle = spatial_oracle(&x, &p).unwrap();
        assert!(max_abs_diff(&oracle, &expected).unwrap() < 1e-15);
        assert!(rel_linf(&fourier_sr_forward(&x, &p).unwrap(), &oracle).unwrap() < 1e-12);
    }

    #[test]
    fn forward_matches_oracle_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[8, 12, 16], &mut rng);
        let p = FourierSRParams::random(8, 2, false, &mut rng).unwrap();
        let a = fourier_sr_forward(&x, &p).unwrap();
        let b = spatial_oracle(&x, &p).unwrap();
        assert!(rel_linf(&a, &b).unwrap() < 1e-10);
    }

    #[test]
    fn single_precision_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x: Tensor<f32> = random(&[4, 8, 7], &mut rng).cast();
        let p64 = FourierSRParams::<f64>::random(4, 2, false, &mut rng).unwrap();
        let p = FourierSRParams::<f32>::from_entries(
            4,
            2,
            p64.entries().iter().map(|(_, t)| t.cast()).collect(),
            false,
        )
        .unwrap();
        let a = fourier_sr_forward(&x, &p).unwrap();
        let b = spatial_oracle(&x, &p).unwrap();
        assert!(rel_linf(&a, &b).unwrap() < 1e-4);
    }

    #[test]
    fn forward_is_linear_without_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[4, 6, 6], &mut rng);
        let z = random(&[4, 6, 6], &mut rng);
        let p = FourierSRParams::random(4, 2, false, &mut rng).unwrap();
        let (alpha, beta) = (0.7, -1.3);
        let combo = x.scale(alpha).add(&z.scale(beta)).unwrap();
        let lhs = fourier_sr_forward(&combo, &p).unwrap();
        let rhs = fourier_sr_forward(&x, &p)
            .unwrap()
            .scale(alpha)
            .add(&fourier_sr_forward(&z, &p).unwrap().scale(beta))
            .unwrap();
        assert!(max_abs_diff(&lhs, &rhs).unwrap() < 1e-12);
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let p = FourierSRParams::<f64>::identity_plugin(4, 2).unwrap();
        assert!(matches!(
            fourier_sr_forward(&Tensor::zeros(&[3, 4, 4]), &p),
            Err(Error::Dimension { .. })
        ));
    }
}

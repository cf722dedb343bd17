//! Discrete Fourier transforms and circular-convolution identities.
//!
//! Convention: forward transforms are unnormalized with kernel
//! `exp(-2πi·kn/N)`; inverse transforms carry `1/N` (`1/(HW)` in 2-D).
//! The 2-D real transforms act on the last two axes and store the
//! non-redundant half spectrum of width `W/2 + 1`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, Scalar, Tensor};

/// Width of the half spectrum of a length-`w` real signal.
pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Half-width 2-D spectrum of a real tensor.
///
/// `data` has shape `(..., H, W/2 + 1)`; the full spectrum it stands for is
/// Hermitian, `S[u, v] = conj(S[-u mod H, -v mod W])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D<T: Scalar = f64> {
    pub data: ComplexTensor<T>,
    pub full_width: usize,
}

impl<T: Scalar> Spectrum2D<T> {
    pub fn new(data: ComplexTensor<T>, full_width: usize) -> Result<Self> {
        let shape = data.shape();
        if shape.len() < 2 || shape[shape.len() - 1] != half_width(full_width) {
            return Err(Error::dim(
                format!("Spectrum2D with full width {full_width}"),
                shape,
                &[half_width(full_width)],
            ));
        }
        Ok(Spectrum2D { data, full_width })
    }

    pub fn height(&self) -> usize {
        let s = self.data.shape();
        s[s.len() - 2]
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn conj(&self) -> Self {
        Spectrum2D {
            data: self.data.conj(),
            full_width: self.full_width,
        }
    }
}

fn require_rank(context: &str, shape: &[usize], min: usize) -> Result<()> {
    if shape.len() < min {
        return Err(Error::dim(format!("{context} needs rank >= {min}"), shape, &[]));
    }
    Ok(())
}

struct Plan<T: Scalar> {
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    scratch: Vec<Complex<T>>,
}

impl<T: Scalar> Plan<T> {
    fn new(planner: &mut FftPlanner<T>, len: usize) -> Self {
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Plan {
            forward,
            inverse,
            scratch: vec![Complex::new(T::zero(), T::zero()); scratch_len],
        }
    }

    fn forward(&mut self, buf: &mut [Complex<T>]) {
        self.forward.process_with_scratch(buf, &mut self.scratch);
    }

    fn inverse(&mut self, buf: &mut [Complex<T>]) {
        self.inverse.process_with_scratch(buf, &mut self.scratch);
    }
}

fn zero<T: Scalar>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

fn check_1d<T: Scalar>(x: &ComplexTensor<T>) -> Result<()> {
    if x.shape().len() != 1 {
        return Err(Error::dim("fft1d expects rank 1", x.shape(), &[]));
    }
    Ok(())
}

fn transform_1d<T: Scalar>(x: &ComplexTensor<T>, inverse: bool) -> Result<ComplexTensor<T>> {
    check_1d(x)?;
    let n = x.numel();
    let mut buf: Vec<Complex<T>> = x
        .re()
        .data()
        .iter()
        .zip(x.im().data())
        .map(|(&r, &i)| Complex::new(r, i))
        .collect();
    let mut plan = Plan::new(&mut FftPlanner::new(), n);
    if inverse {
        plan.inverse(&mut buf);
        let scale = T::one() / T::of(n as f64);
        buf.iter_mut().for_each(|c| *c = *c * scale);
    } else {
        plan.forward(&mut buf);
    }
    ComplexTensor::new(
        Tensor::new(&[n], buf.iter().map(|c| c.re).collect())?,
        Tensor::new(&[n], buf.iter().map(|c| c.im).collect())?,
    )
}

/// Forward 1-D DFT of any length.
pub fn fft1d<T: Scalar>(x: &ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    transform_1d(x, false)
}

/// Inverse 1-D DFT with `1/N` normalization.
pub fn ifft1d<T: Scalar>(x: &ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    transform_1d(x, true)
}

/// 2-D DFT of a real tensor over its last two axes, half-width storage.
pub fn rfft2<T: Scalar>(x: &Tensor<T>) -> Result<Spectrum2D<T>> {
    require_rank("rfft2", x.shape(), 2)?;
    let shape = x.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let wh = half_width(w);
    let planes = x.numel() / (h * w);

    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = wh;
    let mut re = vec![T::zero(); planes * h * wh];
    let mut im = vec![T::zero(); planes * h * wh];

    let mut planner = FftPlanner::new();
    let mut rows = Plan::new(&mut planner, w);
    let mut cols = Plan::new(&mut planner, h);
    let mut row_buf = vec![zero::<T>(); w];
    let mut half = vec![zero::<T>(); h * wh];
    let mut col_buf = vec![zero::<T>(); h];

    let two = T::of(0.5);
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        // two real rows per complex transform: z = a + i·b
        for m in (0..h).step_by(2) {
            let next = (m + 1 < h).then(|| &src[(m + 1) * w..(m + 2) * w]);
            for (k, (b, &v)) in row_buf.iter_mut().zip(&src[m * w..(m + 1) * w]).enumerate() {
                *b = Complex::new(v, next.map_or(T::zero(), |r| r[k]));
            }
            rows.forward(&mut row_buf);
            for k in 0..wh {
                let (zk, zn) = (row_buf[k], row_buf[(w - k) % w].conj());
                half[m * wh + k] = (zk + zn) * two;
                if next.is_some() {
                    let d = zk - zn;
                    half[(m + 1) * wh + k] = Complex::new(d.im, -d.re) * two;
                }
            }
        }
        for v in 0..wh {
            for m in 0..h {
                col_buf[m] = half[m * wh + v];
            }
            cols.forward(&mut col_buf);
            for m in 0..h {
                half[m * wh + v] = col_buf[m];
            }
        }
        let base = p * h * wh;
        for (k, c) in half.iter().enumerate() {
            re[base + k] = c.re;
            im[base + k] = c.im;
        }
    }
    Spectrum2D::new(
        ComplexTensor::new(Tensor::new(&out_shape, re)?, Tensor::new(&out_shape, im)?)?,
        w,
    )
}

/// Inverse of [`rfft2`], reconstructing a real `(..., h, w)` tensor.
///
/// The stored half spectrum is extended by Hermitian symmetry; imaginary
/// parts that the extension determines (DC column and, for even `w`, the
/// Nyquist column) only contribute through the real part of the result.
pub fn irfft2<T: Scalar>(s: &Spectrum2D<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let shape = s.shape();
    require_rank("irfft2", shape, 2)?;
    let wh = half_width(w);
    let (sh, sw) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if sh != h || sw != wh || s.full_width != w {
        return Err(Error::dim(
            format!("irfft2 target {h}x{w} (full width {})", s.full_width),
            shape,
            &[h, wh],
        ));
    }
    let planes = s.data.numel() / (h * wh);
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = w;
    let mut out = vec![T::zero(); planes * h * w];

    let mut planner = FftPlanner::new();
    let mut rows = Plan::new(&mut planner, w);
    let mut cols = Plan::new(&mut planner, h);
    let mut half = vec![zero::<T>(); h * wh];
    let mut col_buf = vec![zero::<T>(); h];
    let mut row_buf = vec![zero::<T>(); w];
    let scale = T::one() / T::of((h * w) as f64);

    let (sre, sim) = (s.data.re().data(), s.data.im().data());
    for p in 0..planes {
        let base = p * h * wh;
        for k in 0..h * wh {
            half[k] = Complex::new(sre[base + k], sim[base + k]);
        }
        for v in 0..wh {
            for m in 0..h {
                col_buf[m] = half[m * wh + v];
            }
            cols.inverse(&mut col_buf);
            for m in 0..h {
                half[m * wh + v] = col_buf[m];
            }
        }
        // Only the real part of each row's inverse is kept, so the imaginary
        // parts at DC and Nyquist drop out. Zeroing them makes each extended
        // row exactly Hermitian, and two rows then share one transform as a + i·b.
        let nyquist = w.is_multiple_of(2).then_some(w / 2);
        for m in 0..h {
            half[m * wh].im = T::zero();
            if let Some(v) = nyquist {
                half[m * wh + v].im = T::zero();
            }
        }
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for m in (0..h).step_by(2) {
            let a = &half[m * wh..(m + 1) * wh];
            let b = (m + 1 < h).then(|| &half[(m + 1) * wh..(m + 2) * wh]);
            let ib = |c: Complex<T>| Complex::new(-c.im, c.re);
            for v in 0..w {
                let (av, bv) = if v < wh {
                    (a[v], b.map_or(zero(), |b| b[v]))
                } else {
                    (a[w - v].conj(), b.map_or(zero(), |b| b[w - v].conj()))
                };
                row_buf[v] = av + ib(bv);
            }
            rows.inverse(&mut row_buf);
            for (k, c) in row_buf.iter().enumerate() {
                dst[m * w + k] = c.re * scale;
                if b.is_some() {
                    dst[(m + 1) * w + k] = c.im * scale;
                }
            }
        }
    }
    Tensor::new(&out_shape, out)
}

fn spatial_dims(shape: &[usize]) -> (usize, usize) {
    (shape[shape.len() - 2], shape[shape.len() - 1])
}

/// Modular reversal of the last two axes: `y[m, n] = x[-m mod H, -n mod W]`.
///
/// # Panics
/// If `x` has rank below 2.
pub fn circular_flip<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    assert!(x.rank() >= 2, "circular_flip needs rank >= 2");
    let (h, w) = spatial_dims(x.shape());
    let src = x.data();
    Tensor::from_fn(x.shape(), |flat| {
        let plane = flat / (h * w);
        let m = (flat / w) % h;
        let n = flat % w;
        src[plane * h * w + ((h - m) % h) * w + (w - n) % w]
    })
}

/// Direct circular convolution over the last two axes,
/// `y[m, n] = Σ x[p, q] · k[(m - p) mod H, (n - q) mod W]`.
///
/// `k` either matches `x`'s full shape (one kernel per plane) or is a single
/// `(H, W)` kernel applied to every plane. This is an O(H²W²) reference sum
/// and deliberately does not use any transform.
pub fn circular_conv2d<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    require_rank("circular_conv2d", x.shape(), 2)?;
    require_rank("circular_conv2d", k.shape(), 2)?;
    let (h, w) = spatial_dims(x.shape());
    if spatial_dims(k.shape()) != (h, w) || (k.shape() != x.shape() && k.rank() != 2) {
        return Err(Error::dim("circular_conv2d", x.shape(), k.shape()));
    }
    let plane_len = h * w;
    let planes = x.numel() / plane_len;
    let shared_kernel = k.numel() == plane_len;
    let mut out = vec![T::zero(); x.numel()];
    for p in 0..planes {
        let xs = &x.data()[p * plane_len..(p + 1) * plane_len];
        let ks = if shared_kernel {
            k.data()
        } else {
            &k.data()[p * plane_len..(p + 1) * plane_len]
        };
        let ys = &mut out[p * plane_len..(p + 1) * plane_len];
        for m in 0..h {
            for n in 0..w {
                let mut acc = T::zero();
                for pp in 0..h {
                    let kr = ((m + h - pp) % h) * w;
                    for q in 0..w {
                        acc += xs[pp * w + q] * ks[kr + (n + w - q) % w];
                    }
                }
                ys[m * w + n] = acc;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Splits `x` into `(x + flip(x)) / 2` and `(x - flip(x)) / 2`.
pub fn even_odd_parts<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let flipped = circular_flip(x);
    let half = T::of(0.5);
    let even = x.zip_map(&flipped, |a, b| (a + b) * half).expect("same shape");
    let odd = x.zip_map(&flipped, |a, b| (a - b) * half).expect("same shape");
    (even, odd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// O(N²) DFT reference.
    fn direct_dft(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = re.len();
        let mut out_re = vec![0.0; n];
        let mut out_im = vec![0.0; n];
        for k in 0..n {
            for j in 0..n {
                let theta = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                out_re[k] += re[j] * theta.cos() - im[j] * theta.sin();
                out_im[k] += re[j] * theta.sin() + im[j] * theta.cos();
            }
        }
        (out_re, out_im)
    }

    fn vec1(v: &[f64]) -> ComplexTensor {
        ComplexTensor::from_real(Tensor::new(&[v.len()], v.to_vec()).unwrap())
    }

    #[test]
    fn delta_and_constant() {
        let s = fft1d(&vec1(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(s.re().data(), &[1.0; 4]);
        assert!(s.im().data().iter().all(|&v| v == 0.0));
        let c = 2.5;
        let s = fft1d(&vec1(&[c; 4])).unwrap();
        assert!((s.re().data()[0] - 4.0 * c).abs() < 1e-15);
        assert!(s.re().data()[1..].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn fft1d_matches_direct_dft_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=32 {
            let re: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let im: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = ComplexTensor::new(
                Tensor::new(&[n], re.clone()).unwrap(),
                Tensor::new(&[n], im.clone()).unwrap(),
            )
            .unwrap();
            let s = fft1d(&x).unwrap();
            let (dr, di) = direct_dft(&re, &im);
            for k in 0..n {
                assert!((s.re().data()[k] - dr[k]).abs() < 1e-11, "n={n} k={k}");
                assert!((s.im().data()[k] - di[k]).abs() < 1e-11, "n={n} k={k}");
            }
            let back = ifft1d(&s).unwrap();
            assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
        }
    }

    #[test]
    fn rfft2_constant_image() {
        let x = Tensor::<f64>::full(&[4, 4], 0.75);
        let s = rfft2(&x).unwrap();
        assert_eq!(s.shape(), &[4, 3]);
        assert!((s.data.re().data()[0] - 16.0 * 0.75).abs() < 1e-14);
        for k in 1..12 {
            assert!(s.data.re().data()[k].abs() < 1e-14);
            assert!(s.data.im().data()[k].abs() < 1e-14);
        }
    }

    #[test]
    fn rfft2_matches_direct_2d_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (h, w) in [(6, 6), (5, 7), (1, 4), (3, 1)] {
            let x = Tensor::from_fn(&[h, w], |_| rng.random_range(-1.0..1.0));
            let s = rfft2(&x).unwrap();
            let wh = half_width(w);
            for u in 0..h {
                for v in 0..wh {
                    let (mut r, mut i) = (0.0, 0.0);
                    for m in 0..h {
                        for n in 0..w {
                            let th = -2.0 * PI * ((u * m) as f64 / h as f64 + (v * n) as f64 / w as f64);
                            r += x.get(&[m, n]) * th.cos();
                            i += x.get(&[m, n]) * th.sin();
                        }
                    }
                    assert!((s.data.re().get(&[u, v]) - r).abs() < 1e-12);
                    assert!((s.data.im().get(&[u, v]) - i).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rfft2_round_trip_even_and_odd_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for shape in [[3, 8, 10], [2, 5, 7], [1, 1, 1], [2, 1, 6]] {
            let x = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
            let s = rfft2(&x).unwrap();
            let back = irfft2(&s, shape[1], shape[2]).unwrap();
            assert!(crate::tensor::max_abs_diff(&x, &back).unwrap() < 1e-12);
        }
    }

    #[test]
    fn irfft2_rejects_inconsistent_target() {
        let s = rfft2(&Tensor::<f64>::zeros(&[4, 6])).unwrap();
        assert!(matches!(irfft2(&s, 4, 8), Err(Error::Dimension { .. })));
        assert!(matches!(irfft2(&s, 5, 6), Err(Error::Dimension { .. })));
        // Width 7 shares the half width of 6 but not the full width.
        assert!(matches!(irfft2(&s, 4, 7), Err(Error::Dimension { .. })));
    }

    #[test]
    fn flip_examples() {
        let x = Tensor::new(&[1, 1], vec![3.0]).unwrap();
        assert_eq!(circular_flip(&x), x);
        let row = Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(circular_flip(&row).data(), &[1.0, 4.0, 3.0, 2.0]);
        let col = Tensor::new(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(circular_flip(&col).data(), &[1.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn flip_conjugates_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::from_fn(&[2, 6, 5], |_| rng.random_range(-1.0..1.0));
        let a = rfft2(&circular_flip(&x)).unwrap();
        let b = rfft2(&x).unwrap().conj();
        assert!(a.data.max_abs_diff(&b.data).unwrap() < 1e-12);
    }

    #[test]
    fn conv_examples() {
        let x = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut delta = Tensor::zeros(&[2, 2]);
        delta.data_mut()[0] = 1.0;
        assert_eq!(circular_conv2d(&x, &delta).unwrap(), x);
        let k = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(circular_conv2d(&x, &k).unwrap().data(), &[5.0, 5.0, 5.0, 5.0]);
        assert!(circular_conv2d(&x, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn even_odd_examples() {
        let sym = Tensor::new(&[1, 4], vec![1.0, 2.0, 5.0, 2.0]).unwrap();
        let (even, odd) = even_odd_parts(&sym);
        assert_eq!(even, sym);
        assert!(odd.data().iter().all(|&v| v == 0.0));
        let x = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 4.0, 0.25, 8.0]).unwrap();
        let (even, odd) = even_odd_parts(&x);
        assert_eq!(even.add(&odd).unwrap(), x);
    }
}

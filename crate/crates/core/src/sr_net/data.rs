//! Procedural grayscale training pairs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::downsample;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One training pair: `lr = downsample(hr, s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair<T: Scalar = f64> {
    /// `(1, h, w)` in `[0, 1]`.
    pub lr: Tensor<T>,
    /// `(1, s·h, s·w)` ground truth.
    pub hr: Tensor<T>,
}

fn sinusoids(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(2..=4))
        .map(|_| {
            let theta = rng.random_range(0.0..PI);
            // cycles per pixel up to ~0.35, i.e. past the ×2 LR Nyquist
            let freq = rng.random_range(0.01..0.35);
            (theta, freq, rng.random_range(0.0..2.0 * PI), rng.random_range(0.3..1.0))
        })
        .collect();
    (0..n * n)
        .map(|f| {
            let (r, c) = ((f / n) as f64, (f % n) as f64);
            waves
                .iter()
                .map(|&(th, fr, ph, amp)| amp * (2.0 * PI * fr * (c * th.cos() + r * th.sin()) + ph).sin())
                .sum()
        })
        .collect()
}

fn checkers(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cell = rng.random_range(2..=n / 4).max(2) as f64;
    let theta = rng.random_range(0.0..PI / 2.0);
    let (ct, st) = (theta.cos(), theta.sin());
    (0..n * n)
        .map(|f| {
            let (r, c) = ((f / n) as f64, (f % n) as f64);
            let u = ((c * ct + r * st) / cell).floor() as i64;
            let v = ((r * ct - c * st) / cell).floor() as i64;
            if (u + v).rem_euclid(2) == 0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Uniform noise smoothed by repeated circular 3×3 box blurs.
fn smooth_field(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    for _ in 0..rng.random_range(1..=6) {
        let prev = x.clone();
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for dr in [n - 1, 0, 1] {
                    for dc in [n - 1, 0, 1] {
                        acc += prev[((r + dr) % n) * n + (c + dc) % n];
                    }
                }
                x[r * n + c] = acc / 9.0;
            }
        }
    }
    x
}

/// Mixture of the three pattern families, rescaled to `[0, 1]`.
fn synth_image(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let parts = [sinusoids(n, rng), checkers(n, rng), smooth_field(n, rng)];
    let weights: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut img = vec![0.0; n * n];
    for (p, &wt) in parts.iter().zip(&weights) {
        let (lo, hi) = p.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        for (d, &v) in img.iter_mut().zip(p) {
            *d += wt * (v - lo) / span;
        }
    }
    let (lo, hi) = img.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    img.iter_mut().for_each(|v| *v = (*v - lo) / span);
    img
}

/// `n` square `hr_size × hr_size` images with their bicubic LR versions.
pub fn synth_dataset<T: Scalar>(seed: u64, n: usize, hr_size: usize, scale: usize) -> Result<Vec<SamplePair<T>>> {
    if scale == 0 || !hr_size.is_multiple_of(scale) || hr_size < 8 {
        return Err(Error::Config(format!(
            "hr_size {hr_size} must be at least 8 and divisible by scale {scale}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let img = synth_image(hr_size, &mut rng);
            let hr = Tensor::new(&[1, hr_size, hr_size], img.into_iter().map(T::of).collect())?;
            let lr = downsample(&hr, scale)?;
            Ok(SamplePair { lr, hr })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::rfft2;

    #[test]
    fn same_seed_same_data() {
        let a: Vec<SamplePair> = synth_dataset(7, 3, 24, 2).unwrap();
        let b: Vec<SamplePair> = synth_dataset(7, 3, 24, 2).unwrap();
        assert_eq!(a, b);
        let c: Vec<SamplePair> = synth_dataset(8, 3, 24, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_and_range() {
        let d: Vec<SamplePair> = synth_dataset(1, 4, 36, 3).unwrap();
        for p in &d {
            assert_eq!(p.hr.shape(), &[1, 36, 36]);
            assert_eq!(p.lr.shape(), &[1, 12, 12]);
            assert!(p.hr.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(synth_dataset::<f64>(1, 1, 25, 2).is_err());
    }

    #[test]
    fn images_carry_high_frequency_energy() {
        let d: Vec<SamplePair> = synth_dataset(3, 8, 32, 2).unwrap();
        for p in &d {
            let s = rfft2(&p.hr.map(|v| v - p.hr.sum() / 1024.0)).unwrap();
            let (re, im) = (s.data.re().data(), s.data.im().data());
            let wh = 17;
            let (mut low, mut high) = (0.0, 0.0);
            for k in 0..re.len() {
                let (u, v) = (k / wh, k % wh);
                let u = u.min(32 - u);
                let e = re[k] * re[k] + im[k] * im[k];
                if u.max(v) > 8 {
                    high += e;
                } else {
                    low += e;
                }
            }
            assert!(high > 1e-4 * (low + high), "high {high} low {low}");
        }
    }
}

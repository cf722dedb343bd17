//! Image-quality metrics on `[0, 1]` images.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape<T: Scalar>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(what, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape("mse", a, b)?;
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok(total / a.numel() as f64)
}

/// `10·log10(1 / MSE)` for unit dynamic range.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB)
    })
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - mid).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable "valid" Gaussian filtering of one plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|k| g[k] * x[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

fn planes<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::dim("ssim image", t.shape(), &[SSIM_WINDOW, SSIM_WINDOW])),
    }
}

/// Mean structural similarity over the valid window positions, averaged over
/// channels. Images must be at least 11×11.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (c, h, w) = planes(a)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim("ssim image", a.shape(), &[SSIM_WINDOW, SSIM_WINDOW]));
    }
    let g = gaussian_taps();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = a.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let y: Vec<f64> = b.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { x.iter().zip(&y).map(|(&p, &q)| f(p, q)).collect() };
        let mx = filter_valid(&x, h, w, &g);
        let my = filter_valid(&y, h, w, &g);
        let mxx = filter_valid(&prod(|p, _| p * p), h, w, &g);
        let myy = filter_valid(&prod(|_, q| q * q), h, w, &g);
        let mxy = filter_valid(&prod(|p, q| p * q), h, w, &g);
        let n = mx.len();
        let mut sum = 0.0;
        for k in 0..n {
            let (ux, uy) = (mx[k], my[k]);
            let (vx, vy, cxy) = (mxx[k] - ux * ux, myy[k] - uy * uy, mxy[k] - ux * uy);
            sum += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / n as f64;
    }
    Ok(total / c as f64)
}

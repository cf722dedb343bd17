//! Bicubic resampling and 8-bit binary PGM files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Cubic convolution coefficient.
pub const CUBIC_A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let t = x.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Normalized taps `(source index, weight)` for each output sample of a
/// length-`n_in` → length-`n_out` resize. Downscaling widens the kernel by
/// the inverse scale (antialiasing); borders replicate.
fn taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_out as f64 / n_in as f64;
    let stretch = scale.min(1.0);
    let support = 2.0 / stretch;
    (0..n_out)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut t: Vec<(usize, f64)> = Vec::new();
            for j in lo..=hi {
                let wgt = cubic((center - j as f64) * stretch);
                if wgt != 0.0 {
                    let src = j.clamp(0, n_in as isize - 1) as usize;
                    t.push((src, wgt));
                }
            }
            let total: f64 = t.iter().map(|&(_, w)| w).sum();
            t.iter_mut().for_each(|(_, w)| *w /= total);
            t
        })
        .collect()
}

/// Resizes every `(H, W)` plane of a `(C, H, W)` tensor.
pub fn resize_bicubic<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if x.rank() != 3 || out_h == 0 || out_w == 0 {
        return Err(Error::dim("resize_bicubic", x.shape(), &[out_h, out_w]));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (tw, th) = (taps(w, out_w), taps(h, out_h));
    let mut rows = vec![0.0f64; c * h * out_w];
    for (p, src) in x.data().chunks(w).enumerate() {
        for (n, t) in tw.iter().enumerate() {
            rows[p * out_w + n] = t.iter().map(|&(j, wt)| wt * src[j].as_f64()).sum();
        }
    }
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &rows[ch * h * out_w..(ch + 1) * h * out_w];
        for t in &th {
            for n in 0..out_w {
                let v: f64 = t.iter().map(|&(j, wt)| wt * plane[j * out_w + n]).sum();
                out.push(T::of(v));
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Bicubic downscale by an integer factor; extents must be divisible by it.
pub fn downsample<T: Scalar>(hr: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    let (h, w) = (hr.shape()[1], hr.shape()[2]);
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(Error::Config(format!("{h}x{w} is not divisible by scale {scale}")));
    }
    resize_bicubic(hr, h / scale, w / scale)
}

pub fn upsample<T: Scalar>(lr: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    resize_bicubic(lr, lr.shape()[1] * scale, lr.shape()[2] * scale)
}

/// Writes a `(H, W)` or `(1, H, W)` image with values in `[0, 1]` (clamped)
/// as binary PGM.
pub fn write_pgm<T: Scalar>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = match *img.shape() {
        [h, w] | [1, h, w] => (h, w),
        _ => return Err(Error::dim("write_pgm", img.shape(), &[1])),
    };
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(
        img.data()
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a binary PGM (8-bit) as a `(1, H, W)` tensor scaled to `[0, 1]`.
pub fn read_pgm<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}

pub fn parse_pgm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut pos = 0usize;
    let mut fields = [0usize; 3];
    if bytes.get(..2) != Some(b"P5") {
        return Err(Error::Format {
            offset: 0,
            message: "missing P5 magic".into(),
        });
    }
    pos += 2;
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                offset: start as u64,
                message: "expected a decimal header field".into(),
            })?;
    }
    let [w, h, maxval] = fields;
    if !(1..=255).contains(&maxval) || w == 0 || h == 0 {
        return Err(Error::Format {
            offset: pos as u64,
            message: format!("unsupported header {w}x{h} maxval {maxval}"),
        });
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| Error::Format {
        offset: pos as u64,
        message: format!("raster needs {} bytes", w * h),
    })?;
    let scale = maxval as f64;
    Tensor::new(&[1, h, w], raster.iter().map(|&b| T::of(b as f64 / scale)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_interpolates() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn constant_image_stays_constant() {
        let hr = Tensor::<f64>::full(&[1, 12, 18], 0.37);
        for s in [2, 3] {
            let lr = downsample(&hr, s).unwrap();
            assert_eq!(lr.shape(), &[1, 12 / s, 18 / s]);
            assert!(lr.data().iter().all(|v| (v - 0.37).abs() < 1e-14));
        }
    }

    #[test]
    fn identity_resize_is_exact() {
        let x = Tensor::<f64>::from_fn(&[2, 5, 7], |f| (f as f64).sin());
        let y = resize_bicubic(&x, 5, 7).unwrap();
        assert!(crate::tensor::max_abs_diff(&x, &y).unwrap() < 1e-15);
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn low_frequency_sinusoid_survives_round_trip() {
        let n = 64;
        // 5 cycles across 32 LR pixels: well below the LR Nyquist of 16
        let hr = Tensor::<f64>::from_fn(&[1, n, n], |f| {
            let (r, c) = ((f / n) as f64, (f % n) as f64);
            0.5 + 0.4 * (2.0 * std::f64::consts::PI * (5.0 * c + 3.0 * r) / n as f64).sin()
        });
        let back = upsample(&downsample(&hr, 2).unwrap(), 2).unwrap();
        assert!(correlation(hr.data(), back.data()) > 0.9);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = Tensor::<f64>::from_fn(&[1, 3, 4], |f| f as f64 / 11.0);
        write_pgm(&path, &img).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        let back: Tensor = read_pgm(&path).unwrap();
        assert_eq!(back.shape(), &[1, 3, 4]);
        assert!(crate::tensor::max_abs_diff(&img, &back).unwrap() <= 0.5 / 255.0 + 1e-12);
        // raw bytes survive a second round trip exactly
        write_pgm(&path, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn pgm_header_comments_and_errors() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let t: Tensor = parse_pgm(&bytes).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0]);
        assert!(matches!(parse_pgm::<f64>(b"P2\n1 1\n255\n\0"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_pgm::<f64>(b"P5\n2 2\n255\n\0"), Err(Error::Format { .. })));
    }
}

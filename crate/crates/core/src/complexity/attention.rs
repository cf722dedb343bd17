//! Naive single-head windowed self-attention, used only as a timing baseline.

use crate::tensor::{Scalar, Tensor};

/// Projection weights, each `(C, C)` row-major.
pub struct WindowAttention<T: Scalar> {
    pub channels: usize,
    pub window: usize,
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    pub wo: Vec<T>,
}

fn project<T: Scalar>(w: &[T], c: usize, tokens: &[Vec<T>]) -> Vec<Vec<T>> {
    tokens
        .iter()
        .map(|t| (0..c).map(|o| (0..c).map(|i| w[o * c + i] * t[i]).sum()).collect())
        .collect()
}

impl<T: Scalar> WindowAttention<T> {
    /// Attention inside non-overlapping `M × M` windows of a `(C, H, W)`
    /// input; edge windows are clipped.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert_eq!(c, self.channels);
        let m = self.window;
        let scale = T::of(1.0 / (c as f64).sqrt());
        let mut out = vec![T::zero(); x.numel()];
        for r0 in (0..h).step_by(m) {
            for c0 in (0..w).step_by(m) {
                let pix: Vec<(usize, usize)> = (r0..(r0 + m).min(h))
                    .flat_map(|r| (c0..(c0 + m).min(w)).map(move |q| (r, q)))
                    .collect();
                let tokens: Vec<Vec<T>> = pix
                    .iter()
                    .map(|&(r, q)| (0..c).map(|ch| x.data()[(ch * h + r) * w + q]).collect())
                    .collect();
                let (qs, ks, vs) = (
                    project(&self.wq, c, &tokens),
                    project(&self.wk, c, &tokens),
                    project(&self.wv, c, &tokens),
                );
                for (a, &(r, q)) in pix.iter().enumerate() {
                    let logits: Vec<T> = ks
                        .iter()
                        .map(|k| qs[a].iter().zip(k).map(|(&u, &v)| u * v).sum::<T>() * scale)
                        .collect();
                    let peak = logits.iter().fold(T::neg_infinity(), |p, &v| p.max(v));
                    let e: Vec<T> = logits.iter().map(|&v| (v - peak).exp()).collect();
                    let z: T = e.iter().copied().sum();
                    let mut mixed = vec![T::zero(); c];
                    for (wgt, v) in e.iter().zip(&vs) {
                        for (d, &s) in mixed.iter_mut().zip(v) {
                            *d += *wgt / z * s;
                        }
                    }
                    for o in 0..c {
                        out[(o * h + r) * w + q] = (0..c).map(|i| self.wo[o * c + i] * mixed[i]).sum();
                    }
                }
            }
        }
        Tensor::new(x.shape(), out).expect("shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_values_and_output_with_uniform_attention_average_the_window() {
        let c = 2;
        let eye: Vec<f64> = vec![1.0, 0.0, 0.0, 1.0];
        let zero = vec![0.0; 4];
        let att = WindowAttention {
            channels: c,
            window: 2,
            wq: zero.clone(),
            wk: zero,
            wv: eye.clone(),
            wo: eye,
        };
        let x = Tensor::from_fn(&[2, 2, 3], |f| f as f64);
        let y = att.forward(&x);
        // window 0 spans columns 0..2, window 1 is the clipped column 2
        assert_eq!(y.get(&[0, 0, 0]), (0.0 + 1.0 + 3.0 + 4.0) / 4.0);
        assert_eq!(y.get(&[1, 1, 2]), (8.0 + 11.0) / 2.0);
    }
}

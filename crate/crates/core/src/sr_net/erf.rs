//! Effective-receptive-field probe.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::model::SRModel;

/// `Σ_c |∂ output[0, y, x] / ∂ input[c]|` over the `(H, W)` input grid,
/// normalized to a maximum of 1 (all zeros stay zeros).
pub fn erf_map<T: Scalar>(
    g: &Graph<T>,
    input: NodeId,
    output: NodeId,
    x: &Tensor<T>,
    pos: (usize, usize),
) -> Result<Tensor<T>> {
    let mut g = g.clone();
    g.set_input(input, x.clone())?;
    g.forward_to(output)?;
    let out_shape = g.value(output).expect("evaluated").shape().to_vec();
    let (oh, ow) = (out_shape[out_shape.len() - 2], out_shape[out_shape.len() - 1]);
    if pos.0 >= oh || pos.1 >= ow {
        return Err(Error::Config(format!(
            "position ({}, {}) outside the {oh}x{ow} output",
            pos.0, pos.1
        )));
    }
    let probe = g.pick("erf.probe", output, pos.0 * ow + pos.1);
    g.forward_to(probe)?;
    let grads = g.backward(probe)?;
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut map = vec![T::zero(); h * w];
    if let Some(d) = grads.get(input) {
        for ch in 0..c {
            for (m, &v) in map.iter_mut().zip(&d.data()[ch * h * w..(ch + 1) * h * w]) {
                *m += v.abs();
            }
        }
    }
    let peak = map.iter().fold(T::zero(), |a, &b| a.max(b));
    if peak > T::zero() {
        map.iter_mut().for_each(|v| *v = *v / peak);
    }
    Tensor::new(&[h, w], map)
}

impl<T: Scalar> SRModel<T> {
    pub fn erf(&self, lr: &Tensor<T>, pos: (usize, usize)) -> Result<Tensor<T>> {
        erf_map(&self.graph, self.input, self.output, lr, pos)
    }
}

/// Pixels whose value exceeds `threshold · max`.
pub fn support<T: Scalar>(map: &Tensor<T>, threshold: f64) -> Vec<(usize, usize)> {
    let w = map.shape()[map.rank() - 1];
    let peak = map.max_abs().as_f64();
    map.data()
        .iter()
        .enumerate()
        .filter(|(_, v)| peak > 0.0 && v.as_f64() > threshold * peak)
        .map(|(i, _)| (i / w, i % w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier_ops::FourierSRParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// `k` stacked convolutions without activations (weights kept positive so
    /// no cancellation can hide a tap).
    fn conv_stack(k: usize, c: usize, rng: &mut ChaCha8Rng) -> (Graph, NodeId, NodeId) {
        let mut g = Graph::new();
        let input = g.input("x", 1);
        let mut x = input;
        let mut c_in = 1;
        for i in 0..k {
            let w = g.param(&format!("w{i}"), Tensor::from_fn(&[c, c_in, 3, 3], |_| rng.random_range(0.1..1.0)));
            let b = g.param(&format!("b{i}"), Tensor::zeros(&[c]));
            x = g.conv3x3(&format!("conv{i}"), x, w, b);
            c_in = c;
        }
        (g, input, x)
    }

    /// Support enumeration: the circular (2k+1)² window around `pos`.
    fn window(k: usize, pos: (usize, usize), h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for dy in 0..=2 * k {
            for dx in 0..=2 * k {
                v.push(((pos.0 + h + dy - k) % h, (pos.1 + w + dx - k) % w));
            }
        }
        v.sort_unstable();
        v.dedup();
        v
    }

    #[test]
    fn conv_stacks_have_window_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (h, w) = (13, 11);
        for k in 1..=3 {
            let (g, input, out) = conv_stack(k, 2, &mut rng);
            let x = rand_tensor(&[1, h, w], &mut rng);
            for pos in [(6, 5), (0, 0), (12, 1)] {
                let map = erf_map(&g, input, out, &x, pos).unwrap();
                let mut got = support(&map, 0.0);
                got.sort_unstable();
                assert_eq!(got, window(k, pos, h, w), "k={k} pos={pos:?}");
            }
        }
    }

    fn fourier_erf(p: &FourierSRParams, h: usize, w: usize, pos: (usize, usize), seed: u64) -> Vec<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let input = g.input("x", p.channels());
        let out = g.fourier_sr("fsr", input, p);
        let x = rand_tensor(&[p.channels(), h, w], &mut rng);
        let map = erf_map(&g, input, out, &x, pos).unwrap();
        assert_eq!(map.max_abs(), 1.0);
        let mut s = support(&map, 1e-12);
        s.sort_unstable();
        s
    }

    #[test]
    fn real_filters_reach_only_the_point_and_its_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = FourierSRParams::random(4, 2, true, &mut rng).unwrap().into_real_filter_mode();
        // frequency-constant real filters are deltas; the upper branch flips
        assert_eq!(fourier_erf(&p, 10, 12, (3, 7), 5), vec![(3, 7), (7, 5)]);
    }

    #[test]
    fn imaginary_filters_spread_along_the_row_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = FourierSRParams::random(4, 2, true, &mut rng).unwrap();
        // i·ω on the half spectrum is a Hilbert transform along W; with odd W
        // its kernel is nonzero at every offset
        let (h, w, pos) = (9, 11, (2, 4));
        let expected: Vec<(usize, usize)> = [2, 7].iter().flat_map(|&r| (0..w).map(move |c| (r, c))).collect();
        assert_eq!(fourier_erf(&p, h, w, pos, 6), expected);
    }

    #[test]
    fn zero_weights_give_zero_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let input = g.input("x", 1);
        let w = g.param("w", Tensor::zeros(&[1, 1, 3, 3]));
        let b = g.param("b", Tensor::ones(&[1]));
        let out = g.conv3x3("conv", input, w, b);
        let map = erf_map(&g, input, out, &rand_tensor(&[1, 5, 5], &mut rng), (2, 2)).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positions_outside_the_output_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (g, input, out) = conv_stack(1, 1, &mut rng);
        let x = rand_tensor(&[1, 4, 4], &mut rng);
        assert!(matches!(erf_map(&g, input, out, &x, (4, 0)), Err(Error::Config(_))));
    }
}

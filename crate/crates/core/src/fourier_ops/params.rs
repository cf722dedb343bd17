use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{load_tensor, save_tensor, ComplexTensor, Scalar, Tensor};

/// Archive entry names, in serialization order.
pub const ENTRY_NAMES: [&str; 7] = [
    "omega_m",
    "omega_u_re",
    "omega_u_im",
    "omega_l_re",
    "omega_l_im",
    "fuse_a",
    "fuse_b",
];

/// Learnable parameters of one Fourier token-mix block.
///
/// - `omega_m`: `(ρ, C/ρ, C/ρ)` real channel-mix matrix per group.
/// - `omega_u`, `omega_l`: `(ρ, C/ρ)` complex per-token filters for the
///   conjugated (upper) and plain (lower) branches.
/// - `fuse_a`, `fuse_b`: `(C)` per-channel fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSRParams<T: Scalar = f64> {
    channels: usize,
    rho: usize,
    pub(crate) omega_m: Tensor<T>,
    pub(crate) omega_u: ComplexTensor<T>,
    pub(crate) omega_l: ComplexTensor<T>,
    pub(crate) fuse_a: Tensor<T>,
    pub(crate) fuse_b: Tensor<T>,
    pub residual: bool,
    real_filter_mode: bool,
}

pub(crate) fn check_grouping(channels: usize, rho: usize) -> Result<usize> {
    if rho == 0 || channels == 0 || !channels.is_multiple_of(rho) {
        return Err(Error::Config(format!(
            "rho = {rho} must be positive and divide C = {channels}"
        )));
    }
    Ok(channels / rho)
}

fn expect_shape(name: &str, t: &[usize], want: &[usize]) -> Result<()> {
    if t != want {
        return Err(Error::dim(format!("FourierSRParams.{name}"), t, want));
    }
    Ok(())
}

impl<T: Scalar> FourierSRParams<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        channels: usize,
        rho: usize,
        omega_m: Tensor<T>,
        omega_u: ComplexTensor<T>,
        omega_l: ComplexTensor<T>,
        fuse_a: Tensor<T>,
        fuse_b: Tensor<T>,
        residual: bool,
        real_filter_mode: bool,
    ) -> Result<Self> {
        let group = check_grouping(channels, rho)?;
        expect_shape("omega_m", omega_m.shape(), &[rho, group, group])?;
        expect_shape("omega_u", omega_u.shape(), &[rho, group])?;
        expect_shape("omega_l", omega_l.shape(), &[rho, group])?;
        expect_shape("fuse_a", fuse_a.shape(), &[channels])?;
        expect_shape("fuse_b", fuse_b.shape(), &[channels])?;
        let mut p = FourierSRParams {
            channels,
            rho,
            omega_m,
            omega_u,
            omega_l,
            fuse_a,
            fuse_b,
            residual,
            real_filter_mode: false,
        };
        if real_filter_mode {
            p = p.into_real_filter_mode();
        }
        Ok(p)
    }

    fn identity_mix(channels: usize, rho: usize) -> Result<Tensor<T>> {
        let group = check_grouping(channels, rho)?;
        Ok(Tensor::from_fn(&[rho, group, group], |flat| {
            let (j, i) = ((flat / group) % group, flat % group);
            if i == j {
                T::one()
            } else {
                T::zero()
            }
        }))
    }

    /// Parameters for which the block computes `y = fuse_b · x` on the lower
    /// branch only: identity mix, unit lower filter, zero upper filter.
    pub fn with_lower_gain(channels: usize, rho: usize, gain: f64, residual: bool) -> Result<Self> {
        let group = check_grouping(channels, rho)?;
        Self::new(
            channels,
            rho,
            Self::identity_mix(channels, rho)?,
            ComplexTensor::zeros(&[rho, group]),
            ComplexTensor::from_real(Tensor::ones(&[rho, group])),
            Tensor::zeros(&[channels]),
            Tensor::full(&[channels], T::of(gain)),
            residual,
            false,
        )
    }

    /// With the residual on, this block is an exact identity map
    /// (both fusion weights are zero).
    pub fn identity_plugin(channels: usize, rho: usize) -> Result<Self> {
        Self::with_lower_gain(channels, rho, 0.0, true)
    }

    /// Near-identity start used when inserting a block into a backbone.
    pub fn plugin_init(channels: usize, rho: usize) -> Result<Self> {
        Self::with_lower_gain(channels, rho, 0.1, true)
    }

    /// Uniform `(-1, 1)` draws for every learnable scalar.
    pub fn random(channels: usize, rho: usize, residual: bool, rng: &mut impl Rng) -> Result<Self> {
        let group = check_grouping(channels, rho)?;
        let mut draw = |shape: &[usize]| Tensor::from_fn(shape, |_| T::of(rng.random_range(-1.0..1.0)));
        let omega_m = draw(&[rho, group, group]);
        let omega_u = ComplexTensor::new(draw(&[rho, group]), draw(&[rho, group]))?;
        let omega_l = ComplexTensor::new(draw(&[rho, group]), draw(&[rho, group]))?;
        let fuse_a = draw(&[channels]);
        let fuse_b = draw(&[channels]);
        Self::new(channels, rho, omega_m, omega_u, omega_l, fuse_a, fuse_b, residual, false)
    }

    /// Zeroes the imaginary parts of both spatial filters and marks the
    /// parameters as real-filtered.
    pub fn into_real_filter_mode(mut self) -> Self {
        self.omega_u = ComplexTensor::from_real(self.omega_u.re().clone());
        self.omega_l = ComplexTensor::from_real(self.omega_l.re().clone());
        self.real_filter_mode = true;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rho(&self) -> usize {
        self.rho
    }

    pub fn group_size(&self) -> usize {
        self.channels / self.rho
    }

    pub fn real_filter_mode(&self) -> bool {
        self.real_filter_mode
    }

    pub fn omega_m(&self) -> &Tensor<T> {
        &self.omega_m
    }

    pub fn omega_u(&self) -> &ComplexTensor<T> {
        &self.omega_u
    }

    pub fn omega_l(&self) -> &ComplexTensor<T> {
        &self.omega_l
    }

    pub fn fuse_a(&self) -> &Tensor<T> {
        &self.fuse_a
    }

    pub fn fuse_b(&self) -> &Tensor<T> {
        &self.fuse_b
    }

    /// Number of learnable scalars, `C²/ρ + 6C`.
    pub fn learnable_count(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Real tensors under their archive entry names.
    pub fn entries(&self) -> [(&'static str, &Tensor<T>); 7] {
        [
            (ENTRY_NAMES[0], &self.omega_m),
            (ENTRY_NAMES[1], self.omega_u.re()),
            (ENTRY_NAMES[2], self.omega_u.im()),
            (ENTRY_NAMES[3], self.omega_l.re()),
            (ENTRY_NAMES[4], self.omega_l.im()),
            (ENTRY_NAMES[5], &self.fuse_a),
            (ENTRY_NAMES[6], &self.fuse_b),
        ]
    }

    /// Rebuilds parameters from tensors given in [`ENTRY_NAMES`] order.
    pub fn from_entries(
        channels: usize,
        rho: usize,
        mut tensors: Vec<Tensor<T>>,
        residual: bool,
    ) -> Result<Self> {
        if tensors.len() != ENTRY_NAMES.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                ENTRY_NAMES.len(),
                tensors.len()
            )));
        }
        let fuse_b = tensors.pop().unwrap();
        let fuse_a = tensors.pop().unwrap();
        let l_im = tensors.pop().unwrap();
        let l_re = tensors.pop().unwrap();
        let u_im = tensors.pop().unwrap();
        let u_re = tensors.pop().unwrap();
        let omega_m = tensors.pop().unwrap();
        Self::new(
            channels,
            rho,
            omega_m,
            ComplexTensor::new(u_re, u_im)?,
            ComplexTensor::new(l_re, l_im)?,
            fuse_a,
            fuse_b,
            residual,
            false,
        )
    }

    /// Writes `<prefix><entry>.fsrt` for every entry into `dir`.
    pub fn save_archive(&self, dir: impl AsRef<Path>, prefix: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, t) in self.entries() {
            save_tensor(t, dir.join(format!("{prefix}{name}.fsrt")))?;
        }
        Ok(())
    }

    pub fn load_archive(
        dir: impl AsRef<Path>,
        prefix: &str,
        channels: usize,
        rho: usize,
        residual: bool,
    ) -> Result<Self> {
        let dir = dir.as_ref();
        let tensors = ENTRY_NAMES
            .iter()
            .map(|name| load_tensor(dir.join(format!("{prefix}{name}.fsrt"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(channels, rho, tensors, residual)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn learnable_count_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (c, rho) in [(64, 8), (4, 2), (16, 4), (6, 3), (8, 8), (5, 1)] {
            let p = FourierSRParams::<f64>::random(c, rho, false, &mut rng).unwrap();
            assert_eq!(p.learnable_count(), c * c / rho + 6 * c);
        }
        let p = FourierSRParams::<f64>::plugin_init(64, 8).unwrap();
        assert_eq!(p.learnable_count(), 896);
    }

    #[test]
    fn rejects_bad_grouping() {
        assert!(matches!(
            FourierSRParams::<f64>::identity_plugin(6, 4),
            Err(Error::Config(_))
        ));
        assert!(FourierSRParams::<f64>::identity_plugin(6, 0).is_err());
    }

    #[test]
    fn real_filter_mode_zeroes_imaginary_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = FourierSRParams::<f64>::random(4, 2, false, &mut rng)
            .unwrap()
            .into_real_filter_mode();
        assert!(p.real_filter_mode());
        assert!(p.omega_u().im().data().iter().all(|&v| v == 0.0));
        assert!(p.omega_l().im().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn archive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = FourierSRParams::<f64>::random(8, 2, true, &mut rng).unwrap();
        p.save_archive(dir.path(), "blk.").unwrap();
        for name in ENTRY_NAMES {
            assert!(dir.path().join(format!("blk.{name}.fsrt")).exists());
        }
        let back = FourierSRParams::load_archive(dir.path(), "blk.", 8, 2, true).unwrap();
        assert_eq!(back, p);
    }
}

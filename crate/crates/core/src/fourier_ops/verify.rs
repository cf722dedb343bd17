use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{channel_token_mix, filter_product, fourier_sr_forward, fuse, spatial_oracle, Branch, FourierSRParams, TokenView};
use crate::error::{Error, Result};
use crate::tensor::{max_abs_diff, ComplexTensor, Scalar, Tensor};

/// A negative control counts as "not matching" above this relative distance.
pub const NEGATIVE_CONTROL_THRESHOLD: f64 = 0.1;

/// Which implementation of the block is compared against the spatial oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Fourier,
    /// Same mixing and filtering, with both transforms replaced by identity maps.
    FftRemoved,
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pipeline::Fourier => "fourier",
            Pipeline::FftRemoved => "fft_removed",
        })
    }
}

/// Instance generator for the equivalence suite. Unset fields are drawn per
/// seed: `C ∈ {2, 4, 8, 16}`, `ρ` a divisor of `C`, `H, W ∈ 4..=16`.
#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct VerifyConfig {
    pub channels: Option<usize>,
    pub rho: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub residual: bool,
    pub real_filter_mode: bool,
    pub seed: u64,
}


/// One random problem: input plus parameters.
#[derive(Debug, Clone)]
pub struct Instance<T: Scalar> {
    pub x: Tensor<T>,
    pub params: FourierSRParams<T>,
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if let (Some(c), Some(r)) = (self.channels, self.rho) {
            if r == 0 || c % r != 0 {
                return Err(Error::Config(format!("rho = {r} does not divide C = {c}")));
            }
        }
        if self.channels == Some(0) || self.height == Some(0) || self.width == Some(0) {
            return Err(Error::Config("extents must be positive".into()));
        }
        Ok(())
    }

    /// Draws the instance for seed index `index`.
    pub fn instance<T: Scalar>(&self, index: u64) -> Result<Instance<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
        let channels = self
            .channels
            .unwrap_or_else(|| [2, 4, 8, 16][rng.random_range(0..4)]);
        let rho = match self.rho {
            Some(r) => r,
            None => {
                let divisors: Vec<usize> = (1..=channels).filter(|d| channels.is_multiple_of(*d)).collect();
                divisors[rng.random_range(0..divisors.len())]
            }
        };
        let h = self.height.unwrap_or_else(|| rng.random_range(4..=16));
        let w = self.width.unwrap_or_else(|| rng.random_range(4..=16));
        let mut params = FourierSRParams::random(channels, rho, self.residual, &mut rng)?;
        if self.real_filter_mode {
            params = params.into_real_filter_mode();
        }
        let x = Tensor::from_fn(&[channels, h, w], |_| T::of(rng.random_range(-1.0..1.0)));
        Ok(Instance { x, params })
    }
}

/// Outcome of comparing a pipeline against the spatial oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub pipeline: Pipeline,
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
    pub seeds_tested: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl EquivalenceReport {
    /// CSV header matching [`EquivalenceReport::csv_row`].
    pub const CSV_HEADER: &'static str = "pipeline,seeds,max_abs_diff,max_rel_diff,tolerance,passed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{}",
            self.pipeline, self.seeds_tested, self.max_abs_diff, self.max_rel_diff, self.tolerance, self.passed
        )
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} pipeline over {} seeds: max |diff| = {:.3e}, max rel = {:.3e} (tol {:.1e}) -> {}",
            self.pipeline,
            self.seeds_tested,
            self.max_abs_diff,
            self.max_rel_diff,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// The block with `rfft2`/`irfft2` replaced by identities: tokens are the
/// raw spatial planes and the branch outputs are the real parts.
pub fn fft_removed_forward<T: Scalar>(x: &Tensor<T>, p: &FourierSRParams<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 3 || s[0] != p.channels() {
        return Err(Error::dim("fft_removed_forward", s, &[p.channels()]));
    }
    let tokens = TokenView {
        tokens: ComplexTensor::from_real(x.clone()).into_reshape(&[p.rho(), p.group_size(), s[1], s[2]])?,
        rho: p.rho(),
        full_width: s[2],
    };
    let mixed = channel_token_mix(&tokens, p.omega_m())?;
    let upper = filter_product(&mixed, p.omega_u(), Branch::Upper)?.tokens.re().reshape(s)?;
    let lower = filter_product(&mixed, p.omega_l(), Branch::Lower)?.tokens.re().reshape(s)?;
    fuse(&upper, &lower, p, x)
}

/// Compares the Fourier pipeline with the spatial oracle over `seeds`
/// random instances.
pub fn verify_equivalence<T: Scalar>(config: &VerifyConfig, seeds: usize, tolerance: f64) -> Result<EquivalenceReport> {
    verify_equivalence_with::<T>(config, seeds, tolerance, Pipeline::Fourier)
}

pub fn verify_equivalence_with<T: Scalar>(
    config: &VerifyConfig,
    seeds: usize,
    tolerance: f64,
    pipeline: Pipeline,
) -> Result<EquivalenceReport> {
    config.validate()?;
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    for index in 0..seeds as u64 {
        let inst = config.instance::<T>(index)?;
        let got = match pipeline {
            Pipeline::Fourier => fourier_sr_forward(&inst.x, &inst.params)?,
            Pipeline::FftRemoved => fft_removed_forward(&inst.x, &inst.params)?,
        };
        let want = spatial_oracle(&inst.x, &inst.params)?;
        let abs = max_abs_diff(&got, &want).expect("same shape");
        let scale = want.max_abs().as_f64();
        let rel = if scale > 0.0 {
            abs / scale
        } else if abs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        // NaN must never read as agreement.
        max_abs = if abs.is_nan() { f64::NAN } else { max_abs.max(abs) };
        max_rel = if rel.is_nan() || max_rel.is_nan() { f64::NAN } else { max_rel.max(rel) };
    }
    Ok(EquivalenceReport {
        pipeline,
        max_abs_diff: max_abs,
        max_rel_diff: max_rel,
        seeds_tested: seeds,
        tolerance,
        passed: max_rel <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = verify_equivalence::<f64>(&VerifyConfig::default(), 20, 1e-10).unwrap();
        assert!(report.passed, "{report}");
        assert_eq!(report.seeds_tested, 20);
    }

    #[test]
    fn fft_removed_control_fails() {
        let report =
            verify_equivalence_with::<f64>(&VerifyConfig::default(), 10, 1e-10, Pipeline::FftRemoved).unwrap();
        assert!(!report.passed);
        assert!(report.max_rel_diff > NEGATIVE_CONTROL_THRESHOLD);
    }

    #[test]
    fn scalar_problem_trivially_passes() {
        let config = VerifyConfig {
            channels: Some(1),
            rho: Some(1),
            height: Some(1),
            width: Some(1),
            ..VerifyConfig::default()
        };
        let report = verify_equivalence::<f64>(&config, 5, 1e-10).unwrap();
        assert!(report.passed);
        assert!(report.max_abs_diff < 1e-15);
    }

    #[test]
    fn instances_are_deterministic() {
        let config = VerifyConfig::default();
        let a = config.instance::<f64>(3).unwrap();
        let b = config.instance::<f64>(3).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let config = VerifyConfig {
            channels: Some(6),
            rho: Some(4),
            ..VerifyConfig::default()
        };
        assert!(matches!(verify_equivalence::<f64>(&config, 1, 1e-10), Err(Error::Config(_))));
    }
}

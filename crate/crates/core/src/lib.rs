//! Fourier-domain token mixing for image super-resolution.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense real/complex tensors and the `FSRT` container format.
//! - [`fft`]: 1-D and 2-D transforms, circular flips and direct circular
//!   convolution.
//! - [`fourier_ops`]: the Fourier token-mix operator, its spatial-domain
//!   oracle and the equivalence verifier.
//! - [`autodiff`]: a static reverse-mode graph over a closed op set.
//! - [`sr_net`]: synthetic data, a tiny residual SR backbone, training,
//!   metrics and receptive-field probing.
//! - [`complexity`]: closed-form cost formulas and latency benchmarks.

pub mod autodiff;
pub mod complexity;
pub mod config;
pub mod error;
pub mod fft;
pub mod fourier_ops;
pub mod sr_net;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ComplexTensor, Precision, Scalar, Tensor};

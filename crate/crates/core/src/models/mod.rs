//! Covariances, mixtures, kernels and noise, with their spectral
//! decompositions.

mod gmm;
pub mod io;
mod kernel;
mod noise;
mod spectrum;

pub use gmm::{GaussianComponent, GmmDensity, GmmModel, GmmSampler};
pub use kernel::{decompose_kernel, kernel_power, normalize_power, SensingKernel};
pub use noise::NoiseModel;
pub use spectrum::CovarianceSpectrum;
pub use crate::linalg::SpectrumOrder;

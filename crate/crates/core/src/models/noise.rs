use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::SpectrumOrder;
use crate::models::CovarianceSpectrum;

/// Zero-mean Gaussian measurement noise with positive-definite covariance
/// `Σ_w`, eigenvalues kept in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    covariance: CovarianceSpectrum,
    precision: DMatrix<f64>,
}

impl NoiseModel {
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        let covariance = CovarianceSpectrum::new(covariance, SpectrumOrder::Ascending)?;
        Self::from_spectrum(covariance)
    }

    pub fn from_spectrum(covariance: CovarianceSpectrum) -> Result<Self> {
        let covariance = covariance.reordered(SpectrumOrder::Ascending);
        if covariance.dim() > 0 && covariance.eigenvalues()[0] <= 0.0 {
            return Err(Error::SingularCovariance("noise covariance must be positive definite".into()));
        }
        let u = covariance.eigenvectors();
        let inv = covariance.eigenvalues().map(|l| 1.0 / l);
        let precision = u * DMatrix::from_diagonal(&inv) * u.transpose();
        Ok(Self { covariance, precision })
    }

    /// `σ²·I_ℓ`.
    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::SingularCovariance(format!("noise variance must be positive, got {variance}")));
        }
        Self::new(DMatrix::identity(dim, dim) * variance)
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        Self::from_spectrum(CovarianceSpectrum::from_diagonal(variances, SpectrumOrder::Ascending)?)
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    pub fn spectrum(&self) -> &CovarianceSpectrum {
        &self.covariance
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        self.covariance.matrix()
    }

    /// `Σ_w⁻¹`.
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_det(&self) -> f64 {
        self.covariance.eigenvalues().iter().map(|l| l.ln()).sum()
    }

    /// The noise restricted to its leading `rows` coordinates.
    pub fn leading(&self, rows: usize) -> Result<Self> {
        Self::new(self.matrix().view((0, 0), (rows, rows)).into_owned())
    }
}

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, symmetrize, SpectrumOrder};

/// Eigenvalues this far below zero (relative to the spectral scale) are
/// rounding noise and get clamped; anything more negative is an error.
const PSD_CLAMP_TOL: f64 = 1e-12;

/// A symmetric positive-semidefinite matrix together with its
/// eigendecomposition, sorted by a fixed [`SpectrumOrder`].
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpectrum {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    order: SpectrumOrder,
}

impl CovarianceSpectrum {
    pub fn new(matrix: DMatrix<f64>, order: SpectrumOrder) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Shape(format!(
                "covariance must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariance has non-finite entries".into()));
        }
        let mut matrix = matrix;
        let scale = matrix.amax().max(1.0);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-8 * scale {
            return Err(Error::InvalidInput(format!("covariance is not symmetric (max asymmetry {asym:e})")));
        }
        symmetrize(&mut matrix);

        let (mut eigenvalues, eigenvectors) = sym_eigen(&matrix, order);
        let tol = PSD_CLAMP_TOL * scale;
        for v in eigenvalues.iter_mut() {
            if *v < 0.0 {
                if *v < -tol {
                    return Err(Error::InvalidInput(format!(
                        "covariance is not positive semidefinite (eigenvalue {v:e})"
                    )));
                }
                *v = 0.0;
            }
        }
        Ok(Self { matrix, eigenvalues, eigenvectors, order })
    }

    pub fn from_diagonal(values: &[f64], order: SpectrumOrder) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(values)), order)
    }

    pub fn identity(dim: usize, order: SpectrumOrder) -> Self {
        Self::new(DMatrix::identity(dim, dim), order).expect("identity is PSD")
    }

    /// Same matrix, re-sorted in the other order.
    pub fn reordered(&self, order: SpectrumOrder) -> Self {
        if order == self.order {
            return self.clone();
        }
        Self::new(self.matrix.clone(), order).expect("already validated")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Eigenvectors as columns, in the same order as [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn order(&self) -> SpectrumOrder {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// `U · diag(sqrt(λ))`, a square-root factor usable for sampling even
    /// when the matrix is singular.
    pub fn sqrt_factor(&self) -> DMatrix<f64> {
        let mut f = self.eigenvectors.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            f.column_mut(j).scale_mut(l.max(0.0).sqrt());
        }
        f
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.eigenvectors * DMatrix::from_diagonal(&self.eigenvalues) * self.eigenvectors.transpose()
    }
}

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::sign_of_largest;

/// An `ℓ×m` projection matrix with its thin SVD `M = U · diag(s) · Vᵀ`.
///
/// Singular values are nonincreasing; each left singular vector has its
/// largest-magnitude entry positive (the matching right vector is flipped
/// with it).
#[derive(Debug, Clone, PartialEq)]
pub struct SensingKernel {
    matrix: DMatrix<f64>,
    u: DMatrix<f64>,
    singular_values: DVector<f64>,
    v: DMatrix<f64>,
}

impl SensingKernel {
    /// Decompose `matrix` (`ℓ ≤ m`). An `0×m` kernel is allowed and means
    /// "no measurements".
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = matrix.shape();
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("kernel has non-finite entries".into()));
        }
        if rows > cols {
            return Err(Error::Shape(format!("kernel must have rows <= cols, got {rows}x{cols}")));
        }
        if rows == 0 {
            return Ok(Self {
                matrix,
                u: DMatrix::zeros(0, 0),
                singular_values: DVector::zeros(0),
                v: DMatrix::zeros(cols, 0),
            });
        }
        let svd = nalgebra::SVD::try_new(matrix.clone(), true, true, f64::EPSILON, 0)
            .ok_or_else(|| Error::InvalidInput("SVD did not converge".into()))?;
        let u_raw = svd.u.expect("requested U");
        let vt_raw = svd.v_t.expect("requested V");
        let s_raw = svd.singular_values;

        let mut idx: Vec<usize> = (0..rows).collect();
        idx.sort_by(|&a, &b| s_raw[b].total_cmp(&s_raw[a]));

        let mut u = DMatrix::zeros(rows, rows);
        let mut v = DMatrix::zeros(cols, rows);
        let mut singular_values = DVector::zeros(rows);
        for (c, &k) in idx.iter().enumerate() {
            let mut uc = u_raw.column(k).into_owned();
            let mut vc = vt_raw.row(k).transpose();
            if sign_of_largest(uc.iter().copied()) == Some(-1.0) {
                uc.neg_mut();
                vc.neg_mut();
            }
            u.set_column(c, &uc);
            v.set_column(c, &vc);
            singular_values[c] = s_raw[k];
        }
        Ok(Self { matrix, u, singular_values, v })
    }

    /// Build from a row-major slice.
    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("expected {} entries, got {}", rows * cols, data.len())));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Left singular vectors, `ℓ×ℓ`.
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    /// Right singular vectors, `m×ℓ` with orthonormal columns.
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Average squared row norm, `tr(MMᵀ)/ℓ`.
    pub fn power(&self) -> f64 {
        if self.rows() == 0 {
            return 0.0;
        }
        self.matrix.norm_squared() / self.rows() as f64
    }

    /// Rescale so that [`Self::power`] equals `budget`.
    pub fn normalize_power(&self, budget: f64) -> Result<Self> {
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::InvalidInput(format!("power budget must be positive, got {budget}")));
        }
        let p = self.power();
        if p <= 0.0 {
            return Err(Error::DegenerateKernel("cannot normalize a zero kernel".into()));
        }
        let c = (budget / p).sqrt();
        if c == 1.0 {
            return Ok(self.clone());
        }
        Ok(Self {
            matrix: &self.matrix * c,
            u: self.u.clone(),
            singular_values: &self.singular_values * c,
            v: self.v.clone(),
        })
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.singular_values) * self.v.transpose()
    }

    /// The kernel with an extra row appended.
    pub fn with_row(&self, row: &DVector<f64>) -> Result<Self> {
        if row.len() != self.cols() {
            return Err(Error::Shape(format!("row has length {}, kernel has {} columns", row.len(), self.cols())));
        }
        let mut m = self.matrix.clone().insert_row(self.rows(), 0.0);
        m.row_mut(self.rows()).copy_from(&row.transpose());
        Self::new(m)
    }

    /// The first `rows` rows as a new kernel.
    pub fn top_rows(&self, rows: usize) -> Result<Self> {
        let rows = rows.min(self.rows());
        Self::new(self.matrix.rows(0, rows).into_owned())
    }
}

/// Decompose a raw projection matrix.
pub fn decompose_kernel(matrix: DMatrix<f64>) -> Result<SensingKernel> {
    SensingKernel::new(matrix)
}

pub fn kernel_power(kernel: &SensingKernel) -> f64 {
    kernel.power()
}

pub fn normalize_power(kernel: &SensingKernel, budget: f64) -> Result<SensingKernel> {
    kernel.normalize_power(budget)
}

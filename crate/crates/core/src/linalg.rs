//! Small dense linear-algebra helpers shared by the model, inference and
//! design modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Eigenvalues closer than this (relative to the spectral scale) count as tied.
pub const TIE_TOL: f64 = 1e-10;

/// Ordering of a spectrum's eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SpectrumOrder {
    Descending,
    Ascending,
}

/// `(A + Aᵀ) / 2`, in place.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Flip `v` so that its largest-magnitude entry is positive. The first
/// entry attaining the maximum magnitude decides.
pub fn fix_sign(v: &mut DVector<f64>) {
    if let Some(sign) = sign_of_largest(v.iter().copied()) {
        if sign < 0.0 {
            v.neg_mut();
        }
    }
}

pub(crate) fn sign_of_largest(it: impl Iterator<Item = f64>) -> Option<f64> {
    let mut best = 0.0_f64;
    let mut sign = None;
    for x in it {
        if x.abs() > best {
            best = x.abs();
            sign = Some(x.signum());
        }
    }
    sign
}

/// Symmetric eigendecomposition with a fixed ordering and sign convention.
///
/// Eigenvalues within [`TIE_TOL`] (scaled by the largest magnitude) of each
/// other keep the order the solver produced them in. Each eigenvector has its
/// largest-magnitude entry made positive.
pub fn sym_eigen(a: &DMatrix<f64>, order: SpectrumOrder) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let mut sym = a.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let tol = TIE_TOL * scale.max(1.0);

    // Insertion sort that only moves an entry past a neighbour when it is
    // strictly better by more than the tie tolerance, keeping native order
    // among ties.
    let mut idx: Vec<usize> = (0..n).collect();
    let before = |a: f64, b: f64| match order {
        SpectrumOrder::Descending => a > b + tol,
        SpectrumOrder::Ascending => a < b - tol,
    };
    for i in 1..n {
        let mut j = i;
        while j > 0 && before(eig.eigenvalues[idx[j]], eig.eigenvalues[idx[j - 1]]) {
            idx.swap(j, j - 1);
            j -= 1;
        }
    }

    let values = DVector::from_iterator(n, idx.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &k) in idx.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        fix_sign(&mut v);
        vectors.set_column(c, &v);
    }
    (values, vectors)
}

/// Cholesky factorization, failing with `SingularCovariance` when the matrix
/// is not numerically positive definite.
pub fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCovariance(format!("{what} has non-finite entries")));
    }
    let mut sym = a.clone();
    symmetrize(&mut sym);
    Cholesky::new(sym).ok_or_else(|| Error::SingularCovariance(format!("{what} is not positive definite")))
}

pub fn log_det_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `log N(r; 0, S)` given the Cholesky factor of `S` and its log-determinant.
pub fn gaussian_log_density(residual: &DVector<f64>, chol: &Cholesky<f64, Dyn>, log_det: f64) -> f64 {
    let k = residual.len() as f64;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(residual)
        .expect("cholesky factor has a nonzero diagonal");
    -0.5 * (k * LN_2PI + log_det + z.norm_squared())
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Orthonormal basis of the row space of `a` (returned as columns), using
/// singular vectors whose singular value exceeds `rel_tol` times the largest.
pub fn row_space_basis(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = a.transpose().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rel_tol * smax && smax > 0.0)
        .collect();
    DMatrix::from_fn(u.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

/// Principal angles (radians, ascending) between the row spaces of `a` and `b`.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = row_space_basis(a, 1e-10);
    let qb = row_space_basis(b, 1e-10);
    if qa.ncols() == 0 || qb.ncols() == 0 {
        return Vec::new();
    }
    let c = qa.transpose() * qb;
    let mut angles: Vec<f64> = c
        .singular_values()
        .iter()
        .map(|s| s.clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(|x, y| x.total_cmp(y));
    angles
}

/// Frobenius inner product `tr(AᵀB)`.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_ordering_and_signs() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let (vals, vecs) = sym_eigen(&a, SpectrumOrder::Descending);
        assert_eq!(vals.as_slice(), &[5.0, 2.0, 1.0]);
        assert_eq!(vecs[(1, 0)], 1.0);
        let (vals, _) = sym_eigen(&a, SpectrumOrder::Ascending);
        assert_eq!(vals.as_slice(), &[1.0, 2.0, 5.0]);
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let mut v = DVector::from_vec(vec![0.1, -0.9, 0.3]);
        fix_sign(&mut v);
        assert_eq!(v[1], 0.9);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn principal_angles_of_identical_and_orthogonal_spaces() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(1, 3, &[-2.0, 0.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        assert!(principal_angles(&a, &b)[0].abs() < 1e-7);
        assert!((principal_angles(&a, &c)[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}

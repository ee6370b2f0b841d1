//! Information measures of the channel `y = Mx + w` and their gradients with
//! respect to the kernel `M`: Gaussian mutual information, the MMSE matrix,
//! the I-MMSE gradient and the quadratic Rényi entropy of a mixture output.
//!
//! Everything is real-valued and in nats.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det_chol, log_sum_exp, symmetrize, sym_eigen, SpectrumOrder, LN_2PI};
use crate::models::{CovarianceSpectrum, GmmModel, GmmSampler, NoiseModel, SensingKernel};
use crate::posterior::{MeasurementModel, PosteriorGmm};
use crate::seed::stream_rng;

/// `ln(2πe)`.
pub const LN_2PI_E: f64 = LN_2PI + 1.0;

/// Smallest sample budget accepted by the Monte Carlo estimators.
pub const MIN_MC_SAMPLES: usize = 100;

/// Estimated MMSE matrix `E = E[(x − E[x|y])(x − E[x|y])ᵀ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MmseMatrix {
    matrix: DMatrix<f64>,
    spectrum: CovarianceSpectrum,
    sample_count: usize,
    standard_error: DMatrix<f64>,
}

impl MmseMatrix {
    /// Wraps an estimate. Tiny negative eigenvalues from rounding are
    /// clamped in the cached spectrum; the matrix itself is only symmetrized.
    pub fn new(matrix: DMatrix<f64>, sample_count: usize, standard_error: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || standard_error.shape() != matrix.shape() {
            return Err(Error::Shape("MMSE matrix and its standard error must be square and equal-sized".into()));
        }
        let mut matrix = matrix;
        symmetrize(&mut matrix);
        let (mut values, vectors) = sym_eigen(&matrix, SpectrumOrder::Descending);
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        let clamped = &vectors * DMatrix::from_diagonal(&values) * vectors.transpose();
        let spectrum = CovarianceSpectrum::new(clamped, SpectrumOrder::Descending)?;
        Ok(Self { matrix, spectrum, sample_count, standard_error })
    }

    /// An exactly known matrix (zero standard error).
    pub fn exact(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        Self::new(matrix, 0, DMatrix::zeros(n, n))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn spectrum(&self) -> &CovarianceSpectrum {
        &self.spectrum
    }

    /// Number of Monte Carlo samples, or 0 for a closed-form value.
    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn standard_error(&self) -> &DMatrix<f64> {
        &self.standard_error
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// How [`mmse_matrix_mc_with`] averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MmseEstimator {
    /// Mean of `(x − x̂(y))(x − x̂(y))ᵀ` over paired draws of `x` and `w`.
    /// Standard errors come from the per-sample variance.
    #[default]
    Paired,
    /// Mean of the posterior covariance `Cov(x | y)` over draws of `y`.
    /// Same expectation, much lower variance; exact for a single Gaussian.
    /// Standard errors come from batch means.
    Conditional,
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn exact(value: f64) -> Self {
        Self { value, standard_error: 0.0, samples: 0 }
    }
}

/// Borrowed view of a mixture: weights, means and covariances. Lets the
/// same routines run on a prior [`GmmModel`] or on a [`PosteriorGmm`].
#[derive(Debug, Clone)]
pub struct MixtureRef<'a> {
    weights: Vec<f64>,
    means: Vec<&'a DVector<f64>>,
    covariances: Vec<&'a DMatrix<f64>>,
}

impl<'a> MixtureRef<'a> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (w, m) in self.weights.iter().zip(&self.means) {
            if *w > 0.0 {
                out += *m * *w;
            }
        }
        out
    }
}

impl<'a> From<&'a GmmModel> for MixtureRef<'a> {
    fn from(model: &'a GmmModel) -> Self {
        Self {
            weights: model.weights(),
            means: model.components().iter().map(|c| &c.mean).collect(),
            covariances: model.components().iter().map(|c| c.covariance.matrix()).collect(),
        }
    }
}

impl<'a> From<&'a PosteriorGmm> for MixtureRef<'a> {
    fn from(post: &'a PosteriorGmm) -> Self {
        let mut weights = post.weights();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self {
            weights,
            means: post.components().iter().map(|c| &c.mean).collect(),
            covariances: post.components().iter().map(|c| &c.covariance).collect(),
        }
    }
}

fn check_channel(dim: usize, kernel: &SensingKernel, noise: &NoiseModel) -> Result<()> {
    if kernel.cols() != dim {
        return Err(Error::Shape(format!("kernel has {} columns, source has dimension {dim}", kernel.cols())));
    }
    if kernel.rows() != noise.dim() {
        return Err(Error::Shape(format!("kernel has {} rows, noise has dimension {}", kernel.rows(), noise.dim())));
    }
    Ok(())
}

fn output_covariance(kernel: &SensingKernel, source_cov: &DMatrix<f64>, noise: &NoiseModel) -> DMatrix<f64> {
    let m = kernel.matrix();
    let mut s = m * source_cov * m.transpose() + noise.matrix();
    symmetrize(&mut s);
    s
}

/// Differential entropy `½ log((2πe)^m det Σ)`; `-∞` if `Σ` is singular.
pub fn gaussian_entropy(cov: &CovarianceSpectrum) -> f64 {
    let log_det: f64 = cov.eigenvalues().iter().map(|l| l.ln()).sum();
    0.5 * (cov.dim() as f64 * LN_2PI_E + log_det)
}

/// Shannon entropy of `y = Mx + w` for Gaussian `x`.
pub fn gaussian_output_entropy(kernel: &SensingKernel, source_cov: &CovarianceSpectrum, noise: &NoiseModel) -> Result<f64> {
    check_channel(source_cov.dim(), kernel, noise)?;
    if kernel.rows() == 0 {
        return Ok(0.0);
    }
    let chol = cholesky(&output_covariance(kernel, source_cov.matrix(), noise), "output covariance")?;
    Ok(0.5 * (kernel.rows() as f64 * LN_2PI_E + log_det_chol(&chol)))
}

/// `I(x; y) = ½ log det(I + MᵀΣ_w⁻¹MΣ_x)`, evaluated as
/// `½ [log det(Σ_w + MΣ_xMᵀ) − log det Σ_w]`.
pub fn gaussian_mutual_information(kernel: &SensingKernel, source_cov: &CovarianceSpectrum, noise: &NoiseModel) -> Result<f64> {
    check_channel(source_cov.dim(), kernel, noise)?;
    if kernel.rows() == 0 {
        return Ok(0.0);
    }
    let chol = cholesky(&output_covariance(kernel, source_cov.matrix(), noise), "output covariance")?;
    Ok((0.5 * (log_det_chol(&chol) - noise.log_det())).max(0.0))
}

/// Closed-form MMSE matrix for a Gaussian source, `(Σ_x⁻¹ + MᵀΣ_w⁻¹M)⁻¹`,
/// computed in a form that also works for singular `Σ_x`.
pub fn gaussian_mmse(kernel: &SensingKernel, source_cov: &CovarianceSpectrum, noise: &NoiseModel) -> Result<MmseMatrix> {
    check_channel(source_cov.dim(), kernel, noise)?;
    let dim = source_cov.dim();
    let sigma = source_cov.matrix();
    if kernel.rows() == 0 {
        return MmseMatrix::exact(sigma.clone());
    }
    let m = kernel.matrix();
    let chol = cholesky(&output_covariance(kernel, sigma, noise), "output covariance")?;
    let gain = chol.solve(&(m * sigma)).transpose();
    let a = DMatrix::<f64>::identity(dim, dim) - &gain * m;
    let e = &a * sigma * a.transpose() + &gain * noise.matrix() * gain.transpose();
    MmseMatrix::exact(e)
}

/// Derivative of [`gaussian_mutual_information`] with respect to `M`,
/// `(Σ_w + MΣ_xMᵀ)⁻¹MΣ_x`.
pub fn gaussian_mi_gradient(kernel: &SensingKernel, source_cov: &CovarianceSpectrum, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    check_channel(source_cov.dim(), kernel, noise)?;
    if kernel.rows() == 0 {
        return Ok(DMatrix::zeros(0, source_cov.dim()));
    }
    let chol = cholesky(&output_covariance(kernel, source_cov.matrix(), noise), "output covariance")?;
    Ok(chol.solve(&(kernel.matrix() * source_cov.matrix())))
}

/// The I-MMSE gradient `∇_M I(x; y) = Σ_w⁻¹ M E`.
pub fn mi_gradient(kernel: &SensingKernel, noise: &NoiseModel, mmse: &MmseMatrix) -> Result<DMatrix<f64>> {
    check_channel(mmse.dim(), kernel, noise)?;
    Ok(noise.precision() * kernel.matrix() * mmse.matrix())
}

/// Rényi entropy of order `alpha` of the Gaussian output,
/// `h_s(y) − (ℓ/2)(1 − ln α/(α−1))`.
pub fn gaussian_renyi_entropy(
    kernel: &SensingKernel,
    source_cov: &CovarianceSpectrum,
    noise: &NoiseModel,
    alpha: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) || alpha == 1.0 {
        return Err(Error::InvalidInput(format!("Rényi order must be positive and not 1, got {alpha}")));
    }
    let hs = gaussian_output_entropy(kernel, source_cov, noise)?;
    let l = kernel.rows() as f64;
    Ok(hs - 0.5 * l * (1.0 - alpha.ln() / (alpha - 1.0)))
}

/// Lower bound on `tr(E)` from the prior entropy and the information
/// gained: `(m / 2πe) · exp((2/m)(h(x) − I(x; y)))`. It is tight for a
/// scalar Gaussian source, and with `mi = 0` it is `m` times the entropy
/// power of the source.
pub fn mmse_mi_lower_bound(entropy_x: f64, mi: f64, m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let m = m as f64;
    m / (2.0 * std::f64::consts::PI * std::f64::consts::E) * ((2.0 / m) * (entropy_x - mi)).exp()
}

/// First-order low-SNR expansion `½ tr(Σ_w⁻¹MΣ_xMᵀ)`.
pub fn low_snr_mi_approx(kernel: &SensingKernel, source_cov: &CovarianceSpectrum, noise: &NoiseModel) -> Result<f64> {
    check_channel(source_cov.dim(), kernel, noise)?;
    let m = kernel.matrix();
    Ok(0.5 * (noise.precision() * m * source_cov.matrix() * m.transpose()).trace())
}

/// Splits `n` samples into deterministic batches. The batch layout depends
/// only on `n`, so results never depend on the thread count.
fn batches(n: usize) -> Vec<(usize, usize)> {
    let size = (n / 32).clamp(64, 2048);
    let count = n.div_ceil(size);
    (0..count).map(|b| (b, size.min(n - b * size))).collect()
}

fn check_budget(n: usize) -> Result<()> {
    if n < MIN_MC_SAMPLES {
        return Err(Error::InvalidInput(format!("need at least {MIN_MC_SAMPLES} Monte Carlo samples, got {n}")));
    }
    Ok(())
}

/// Weighted batch-means standard error of `values` (one per batch).
fn batch_standard_error(parts: &[(usize, DMatrix<f64>)], mean: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let b = parts.len();
    if b < 2 {
        return DMatrix::zeros(mean.nrows(), mean.ncols());
    }
    let mut var = DMatrix::zeros(mean.nrows(), mean.ncols());
    for (count, e) in parts {
        let f = *count as f64 / n as f64;
        var += (e - mean).map(|d| d * d) * (f * f);
    }
    (var * (b as f64 / (b - 1) as f64)).map(f64::sqrt)
}

/// Monte Carlo MMSE matrix with paired sampling of `x` and `w` and the
/// analytic posterior mean.
pub fn mmse_matrix_mc(
    source: &GmmModel,
    kernel: &SensingKernel,
    noise: &NoiseModel,
    n_samples: usize,
    seed: u64,
) -> Result<MmseMatrix> {
    mmse_matrix_mc_with(source, kernel, noise, n_samples, seed, MmseEstimator::Paired)
}

pub fn mmse_matrix_mc_with(
    source: &GmmModel,
    kernel: &SensingKernel,
    noise: &NoiseModel,
    n_samples: usize,
    seed: u64,
    estimator: MmseEstimator,
) -> Result<MmseMatrix> {
    check_channel(source.dim(), kernel, noise)?;
    check_budget(n_samples)?;
    let model = MeasurementModel::new(source, kernel, noise)?;
    match estimator {
        MmseEstimator::Paired => paired_mmse(&model, source, kernel, noise, n_samples, seed),
        MmseEstimator::Conditional => conditional_mmse(&model, source, kernel, n_samples, seed),
    }
}

fn paired_mmse(
    model: &MeasurementModel,
    source: &GmmModel,
    kernel: &SensingKernel,
    noise: &NoiseModel,
    n: usize,
    seed: u64,
) -> Result<MmseMatrix> {
    let dim = source.dim();
    let l = kernel.rows();
    let sampler = GmmSampler::new(source);
    let noise_factor = noise.spectrum().sqrt_factor();
    let m = kernel.matrix();
    let parts: Vec<(DMatrix<f64>, DMatrix<f64>)> = batches(n)
        .into_par_iter()
        .map(|(b, count)| {
            let mut rng = stream_rng(seed, b as u64);
            let mut s1 = DMatrix::zeros(dim, dim);
            let mut s2 = DMatrix::zeros(dim, dim);
            for _ in 0..count {
                let (_, x) = sampler.draw(&mut rng);
                let z = DVector::from_fn(l, |_, _| StandardNormal.sample(&mut rng));
                let y = m * &x + &noise_factor * z;
                let e = &x - model.conditional_mean(&y);
                for c in 0..dim {
                    for r in 0..dim {
                        let q = e[r] * e[c];
                        s1[(r, c)] += q;
                        s2[(r, c)] += q * q;
                    }
                }
            }
            (s1, s2)
        })
        .collect();
    let (mut s1, mut s2) = (DMatrix::zeros(dim, dim), DMatrix::zeros(dim, dim));
    for (a, b) in &parts {
        s1 += a;
        s2 += b;
    }
    let nf = n as f64;
    let e = s1 / nf;
    let second = s2 / nf;
    let se = DMatrix::from_fn(dim, dim, |r, c| ((second[(r, c)] - e[(r, c)].powi(2)).max(0.0) / (nf - 1.0)).sqrt());
    MmseMatrix::new(e, n, se)
}

fn conditional_mmse(model: &MeasurementModel, source: &GmmModel, kernel: &SensingKernel, n: usize, seed: u64) -> Result<MmseMatrix> {
    let dim = source.dim();
    let l = kernel.rows();
    let k = source.len();
    let center = source.mean();
    let index = WeightedIndex::new(source.weights()).expect("validated weights");
    let factors: Vec<DMatrix<f64>> = (0..k).map(|i| model.innovation(i).l()).collect();
    // μ̃_i(y) − c = a_i + K_i y
    let offsets: Vec<DVector<f64>> = (0..k)
        .map(|i| &source.components()[i].mean - &center - model.gain(i) * model.predicted_mean(i))
        .collect();
    let covs: Vec<DMatrix<f64>> = (0..k).map(|i| model.component_covariance(i)).collect();

    let parts: Vec<(usize, DMatrix<f64>)> = batches(n)
        .into_par_iter()
        .map(|(b, count)| {
            let mut rng = stream_rng(seed, b as u64);
            let mut w_sum = vec![0.0; k];
            let mut y_sum = vec![DVector::<f64>::zeros(l); k];
            let mut yy_sum = vec![DMatrix::<f64>::zeros(l, l); k];
            let mut xx = DMatrix::<f64>::zeros(dim, dim);
            for _ in 0..count {
                let c = index.sample(&mut rng);
                let z = DVector::from_fn(l, |_, _| StandardNormal.sample(&mut rng));
                let y = model.predicted_mean(c) + &factors[c] * z;
                let (w, _) = model.weights(&y);
                let mut xhat = DVector::<f64>::zeros(dim);
                for i in 0..k {
                    if w[i] == 0.0 {
                        continue;
                    }
                    w_sum[i] += w[i];
                    y_sum[i].axpy(w[i], &y, 1.0);
                    yy_sum[i].ger(w[i], &y, &y, 1.0);
                    xhat += (&offsets[i] + model.gain(i) * &y) * w[i];
                }
                xx.ger(1.0, &xhat, &xhat, 1.0);
            }
            let mut acc = -xx;
            for i in 0..k {
                let ky = model.gain(i) * &y_sum[i];
                acc += (&covs[i] + &offsets[i] * offsets[i].transpose()) * w_sum[i];
                acc += &offsets[i] * ky.transpose() + &ky * offsets[i].transpose();
                acc += model.gain(i) * &yy_sum[i] * model.gain(i).transpose();
            }
            (count, acc / count as f64)
        })
        .collect();
    let mut e = DMatrix::zeros(dim, dim);
    for (count, part) in &parts {
        e += part * (*count as f64 / n as f64);
    }
    let se = batch_standard_error(&parts, &e, n);
    MmseMatrix::new(e, n, se)
}

/// `E·r` for the scalar channel `y = rᵀx + w`, `w ~ N(0, noise_var)`,
/// estimated by averaging `Cov(x | y)·r` over draws of `y`. Cost per sample
/// is linear in the number of components and independent of the dimension.
pub fn row_mmse_product_mc(mix: &MixtureRef, row: &DVector<f64>, noise_var: f64, n_samples: usize, seed: u64) -> Result<DVector<f64>> {
    check_budget(n_samples)?;
    if row.len() != mix.dim() {
        return Err(Error::Shape(format!("row has length {}, mixture has dimension {}", row.len(), mix.dim())));
    }
    if !(noise_var > 0.0) {
        return Err(Error::InvalidInput(format!("noise variance must be positive, got {noise_var}")));
    }
    let k = mix.len();
    let center = mix.mean();
    let log_w: Vec<f64> = mix.weights.iter().map(|w| w.ln()).collect();
    let v: Vec<DVector<f64>> = mix.covariances.iter().map(|s| *s * row).collect();
    let s: Vec<f64> = v.iter().map(|vi| row.dot(vi) + noise_var).collect();
    let p: Vec<f64> = mix.means.iter().map(|mu| row.dot(*mu)).collect();
    let g: Vec<DVector<f64>> = v.iter().zip(&s).map(|(vi, si)| vi / *si).collect();
    let a: Vec<DVector<f64>> = (0..k).map(|i| mix.means[i] - &center - &g[i] * p[i]).collect();
    let alpha: Vec<f64> = a.iter().map(|ai| ai.dot(row)).collect();
    let beta: Vec<f64> = g.iter().map(|gi| gi.dot(row)).collect();
    let log_norm: Vec<f64> = s.iter().map(|si| 0.5 * (LN_2PI + si.ln())).collect();
    let sd: Vec<f64> = s.iter().map(|si| si.sqrt()).collect();
    let index = WeightedIndex::new(&mix.weights).map_err(|e| Error::InvalidInput(e.to_string()))?;

    // Per component: Σw, Σwy, Σwy², Σw·t, Σw·y·t with t = (x̂ − c)ᵀr.
    let parts: Vec<Vec<[f64; 5]>> = batches(n_samples)
        .into_par_iter()
        .map(|(b, count)| {
            let mut rng = stream_rng(seed, b as u64);
            let mut acc = vec![[0.0; 5]; k];
            let mut terms = vec![0.0; k];
            for _ in 0..count {
                let c = index.sample(&mut rng);
                let z: f64 = StandardNormal.sample(&mut rng);
                let y = p[c] + sd[c] * z;
                for i in 0..k {
                    let r = y - p[i];
                    terms[i] = log_w[i] - log_norm[i] - 0.5 * r * r / s[i];
                }
                let lse = log_sum_exp(&terms);
                let mut t = 0.0;
                for i in 0..k {
                    terms[i] = (terms[i] - lse).exp();
                    t += terms[i] * (alpha[i] + beta[i] * y);
                }
                for i in 0..k {
                    let w = terms[i];
                    acc[i][0] += w;
                    acc[i][1] += w * y;
                    acc[i][2] += w * y * y;
                    acc[i][3] += w * t;
                    acc[i][4] += w * y * t;
                }
            }
            acc
        })
        .collect();
    let mut tot = vec![[0.0; 5]; k];
    for part in &parts {
        for (t, q) in tot.iter_mut().zip(part) {
            for j in 0..5 {
                t[j] += q[j];
            }
        }
    }
    let mut out = DVector::zeros(mix.dim());
    for i in 0..k {
        let [w, sy, syy, st, syt] = tot[i];
        // Σ̃_i r = v_i (1 − β_i)
        out.axpy(w * (1.0 - beta[i]), &v[i], 1.0);
        out.axpy(alpha[i] * w + beta[i] * sy - st, &a[i], 1.0);
        out.axpy(alpha[i] * sy + beta[i] * syy - syt, &g[i], 1.0);
    }
    Ok(out / n_samples as f64)
}

/// Monte Carlo mutual information `E[log p(y|x) − log p(y)]` for a mixture
/// source. The draws depend only on `seed`, `n_samples` and the source and
/// noise, not on the kernel, so estimates at nearby kernels share common
/// random numbers.
pub fn mutual_information_mc(
    source: &GmmModel,
    kernel: &SensingKernel,
    noise: &NoiseModel,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_channel(source.dim(), kernel, noise)?;
    check_budget(n_samples)?;
    let l = kernel.rows();
    if l == 0 {
        return Ok(McEstimate { value: 0.0, standard_error: 0.0, samples: n_samples });
    }
    let model = MeasurementModel::new(source, kernel, noise)?;
    let sampler = GmmSampler::new(source);
    let noise_factor = noise.spectrum().sqrt_factor();
    let m = kernel.matrix();
    let cond_norm = 0.5 * (l as f64 * LN_2PI + noise.log_det());
    let parts: Vec<(f64, f64)> = batches(n_samples)
        .into_par_iter()
        .map(|(b, count)| {
            let mut rng = stream_rng(seed, b as u64);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let (_, x) = sampler.draw(&mut rng);
                let z = DVector::from_fn(l, |_, _| StandardNormal.sample(&mut rng));
                let y = m * &x + &noise_factor * &z;
                let v = -cond_norm - 0.5 * z.norm_squared() - log_sum_exp(&model.log_terms(&y));
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = parts.iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    let nf = n_samples as f64;
    let mean = s1 / nf;
    let var = (s2 / nf - mean * mean).max(0.0);
    Ok(McEstimate { value: mean, standard_error: (var / (nf - 1.0)).sqrt(), samples: n_samples })
}

/// Mutual information of a mixture source: closed form for one component,
/// [`mutual_information_mc`] otherwise.
pub fn mutual_information(
    source: &GmmModel,
    kernel: &SensingKernel,
    noise: &NoiseModel,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if source.len() == 1 {
        let c = &source.components()[0];
        return Ok(McEstimate::exact(gaussian_mutual_information(kernel, &c.covariance, noise)?));
    }
    mutual_information_mc(source, kernel, noise, n_samples, seed)
}

/// Entropy of a scalar Gaussian mixture by adaptive quadrature of `−p ln p`.
pub fn scalar_gmm_entropy(weights: &[f64], means: &[f64], variances: &[f64]) -> f64 {
    let active: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let log_w: Vec<f64> = active.iter().map(|&i| weights[i].ln()).collect();
    let log_norm: Vec<f64> = active.iter().map(|&i| 0.5 * (LN_2PI + variances[i].ln())).collect();
    let mut terms = vec![0.0; active.len()];
    let mut f = |y: f64| {
        for (j, &i) in active.iter().enumerate() {
            let r = y - means[i];
            terms[j] = log_w[j] - log_norm[j] - 0.5 * r * r / variances[i];
        }
        let lp = log_sum_exp(&terms);
        if lp == f64::NEG_INFINITY {
            0.0
        } else {
            -lp.exp() * lp
        }
    };
    let mut knots = Vec::new();
    for &i in &active {
        let sd = variances[i].sqrt();
        for k in [-14.0, -9.0, -6.0, -4.0, -3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 9.0, 14.0] {
            knots.push(means[i] + k * sd);
        }
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));
    let mut total = 0.0;
    for w in knots.windows(2) {
        total += adaptive_simpson(&mut f, w[0], w[1], 1e-13, 40);
    }
    total
}

fn adaptive_simpson(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (fa, fb) = (f(a), f(b));
    let c = 0.5 * (a + b);
    let fc = f(c);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, fa: f64, fb: f64, fc: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let c = 0.5 * (a + b);
    let (d, e) = (0.5 * (a + c), 0.5 * (c + b));
    let (fd, fe) = (f(d), f(e));
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, c, fa, fc, fd, left, 0.5 * tol, depth - 1) + simpson_step(f, c, b, fc, fb, fe, right, 0.5 * tol, depth - 1)
}

/// `I(x; rᵀx + w)` for `w ~ N(0, noise_var)`, exact up to quadrature error:
/// the output is a scalar mixture, so `h(y)` is a one-dimensional integral.
pub fn row_mutual_information(mix: &MixtureRef, row: &DVector<f64>, noise_var: f64) -> Result<f64> {
    if row.len() != mix.dim() {
        return Err(Error::Shape(format!("row has length {}, mixture has dimension {}", row.len(), mix.dim())));
    }
    if !(noise_var > 0.0) {
        return Err(Error::InvalidInput(format!("noise variance must be positive, got {noise_var}")));
    }
    let means: Vec<f64> = mix.means.iter().map(|m| row.dot(*m)).collect();
    let vars: Vec<f64> = mix.covariances.iter().map(|s| row.dot(&(*s * row)).max(0.0) + noise_var).collect();
    let h = scalar_gmm_entropy(&mix.weights, &means, &vars);
    Ok((h - 0.5 * (LN_2PI_E + noise_var.ln())).max(0.0))
}

/// One pair term of the quadratic Rényi entropy: `N(0; μ_ij, Σ_ij)` with
/// `μ_ij = M(μ_i − μ_j)` and `Σ_ij = M(Σ_i + Σ_j)Mᵀ + 2Σ_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseGaussianTerm {
    pub mu_ij: DVector<f64>,
    pub sigma_ij: DMatrix<f64>,
}

impl PairwiseGaussianTerm {
    pub fn new(source: &GmmModel, kernel: &SensingKernel, noise: &NoiseModel, i: usize, j: usize) -> Result<Self> {
        check_channel(source.dim(), kernel, noise)?;
        let (ci, cj) = match (source.components().get(i), source.components().get(j)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::InvalidInput(format!("component pair ({i}, {j}) out of range"))),
        };
        let m = kernel.matrix();
        let mut sigma_ij = m * (ci.covariance.matrix() + cj.covariance.matrix()) * m.transpose() + noise.matrix() * 2.0;
        symmetrize(&mut sigma_ij);
        Ok(Self { mu_ij: m * (&ci.mean - &cj.mean), sigma_ij })
    }

    /// `ln N(0; μ_ij, Σ_ij)`.
    pub fn log_density_at_zero(&self) -> Result<f64> {
        let chol = cholesky(&self.sigma_ij, "pair covariance")?;
        let q = chol.solve(&self.mu_ij).dot(&self.mu_ij);
        Ok(-0.5 * (self.mu_ij.len() as f64 * LN_2PI + log_det_chol(&chol) + q))
    }
}

/// `h₂(y) = −log Σ_{i,j} p(i)p(j) N(0; μ_ij, Σ_ij)`.
pub fn renyi2_entropy_gmm(source: &GmmModel, kernel: &SensingKernel, noise: &NoiseModel) -> Result<f64> {
    check_channel(source.dim(), kernel, noise)?;
    Ok(renyi2_core(&MixtureRef::from(source), kernel.matrix(), noise.matrix(), false)?.0)
}

/// Analytic gradient of [`renyi2_entropy_gmm`] with respect to `M`.
pub fn renyi2_gradient_gmm(source: &GmmModel, kernel: &SensingKernel, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    check_channel(source.dim(), kernel, noise)?;
    Ok(renyi2_core(&MixtureRef::from(source), kernel.matrix(), noise.matrix(), true)?
        .1
        .expect("gradient requested"))
}

/// Quadratic Rényi entropy and its gradient for an arbitrary mixture,
/// kernel matrix `m` (`ℓ×dim`) and noise covariance `noise_cov` (`ℓ×ℓ`).
pub fn renyi2_with_gradient(mix: &MixtureRef, m: &DMatrix<f64>, noise_cov: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let (h, g) = renyi2_core(mix, m, noise_cov, true)?;
    Ok((h, g.expect("gradient requested")))
}

pub fn renyi2_entropy_mixture(mix: &MixtureRef, m: &DMatrix<f64>, noise_cov: &DMatrix<f64>) -> Result<f64> {
    Ok(renyi2_core(mix, m, noise_cov, false)?.0)
}

fn renyi2_core(mix: &MixtureRef, m: &DMatrix<f64>, noise_cov: &DMatrix<f64>, with_grad: bool) -> Result<(f64, Option<DMatrix<f64>>)> {
    let (l, dim) = m.shape();
    if dim != mix.dim() || noise_cov.shape() != (l, l) {
        return Err(Error::Shape(format!(
            "kernel is {l}x{dim}, mixture has dimension {}, noise is {}x{}",
            mix.dim(),
            noise_cov.nrows(),
            noise_cov.ncols()
        )));
    }
    if l == 0 {
        return Err(Error::InvalidInput("quadratic Rényi entropy needs at least one measurement".into()));
    }
    let k = mix.len();
    let active: Vec<usize> = (0..k).filter(|&i| mix.weights[i] > 0.0).collect();
    let m_sigma: Vec<DMatrix<f64>> = mix.covariances.iter().map(|s| m * *s).collect();
    let m_mu: Vec<DVector<f64>> = mix.means.iter().map(|mu| m * *mu).collect();
    let two_noise = noise_cov * 2.0;

    let pairs: Vec<(usize, usize)> = active
        .iter()
        .flat_map(|&i| active.iter().filter(move |&&j| j >= i).map(move |&j| (i, j)))
        .collect();
    let terms: Vec<(f64, Option<DMatrix<f64>>)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let ma = &m_sigma[i] + &m_sigma[j];
            let mut s = &ma * m.transpose() + &two_noise;
            symmetrize(&mut s);
            let chol = cholesky(&s, &format!("pair covariance ({i}, {j})"))?;
            let z = &m_mu[i] - &m_mu[j];
            let s_inv_z = chol.solve(&z);
            let mult = if i == j { 1.0 } else { 2.0 };
            let log_term = (mult * mix.weights[i] * mix.weights[j]).ln()
                - 0.5 * (l as f64 * LN_2PI + log_det_chol(&chol) + z.dot(&s_inv_z));
            let grad = with_grad.then(|| {
                // ∇ ln N = −S⁻¹MA + S⁻¹z (zᵀS⁻¹MA − dᵀ), d = μ_i − μ_j
                let s_inv_ma = chol.solve(&ma);
                let d = mix.means[i] - mix.means[j];
                let row = ma.transpose() * &s_inv_z - d;
                -s_inv_ma + &s_inv_z * row.transpose()
            });
            Ok((log_term, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let logs: Vec<f64> = terms.iter().map(|t| t.0).collect();
    let lse = log_sum_exp(&logs);
    let grad = with_grad.then(|| {
        let mut g = DMatrix::zeros(l, dim);
        for (log_t, gt) in &terms {
            g -= gt.as_ref().expect("computed") * (log_t - lse).exp();
        }
        g
    });
    Ok((-lse, grad))
}

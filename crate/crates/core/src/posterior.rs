//! Closed-form Bayesian inference for `y = Mx + w` under a Gaussian-mixture
//! prior and Gaussian noise. The posterior is again a mixture.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, gaussian_log_density, log_det_chol, log_sum_exp, symmetrize, LN_2PI};
use crate::models::io::{matrix_to_rows, rows_to_matrix, ComponentRecord};
use crate::models::{GaussianComponent, GmmModel, NoiseModel, SensingKernel};

/// One component of a posterior mixture. The weight is kept in the log
/// domain so that vanishing components survive without underflow.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorComponent {
    pub log_weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl PosteriorComponent {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGmm {
    components: Vec<PosteriorComponent>,
    evidence_log: f64,
    measurement_count: usize,
}

/// Per-component quantities of the linear-Gaussian measurement that do not
/// depend on the observed `y`: predicted means `Mμ_i`, innovation
/// covariances `S_i = MΣ_iMᵀ + Σ_w` and gains `K_i = Σ_iMᵀS_i⁻¹`.
///
/// Building this once and reusing it for many `y` is what makes the Monte
/// Carlo estimators and per-patch reconstruction cheap.
pub struct MeasurementModel<'a> {
    prior: &'a GmmModel,
    kernel: &'a SensingKernel,
    noise: &'a NoiseModel,
    predicted: Vec<DVector<f64>>,
    innovation: Vec<Cholesky<f64, Dyn>>,
    innovation_log_det: Vec<f64>,
    gains: Vec<DMatrix<f64>>,
    log_prior_weights: Vec<f64>,
}

impl<'a> MeasurementModel<'a> {
    pub fn new(prior: &'a GmmModel, kernel: &'a SensingKernel, noise: &'a NoiseModel) -> Result<Self> {
        if kernel.cols() != prior.dim() {
            return Err(Error::Shape(format!(
                "kernel has {} columns but the prior has dimension {}",
                kernel.cols(),
                prior.dim()
            )));
        }
        if kernel.rows() != noise.dim() {
            return Err(Error::Shape(format!(
                "kernel has {} rows but the noise has dimension {}",
                kernel.rows(),
                noise.dim()
            )));
        }
        let m = kernel.matrix();
        let k = prior.len();
        let mut predicted = Vec::with_capacity(k);
        let mut innovation = Vec::with_capacity(k);
        let mut innovation_log_det = Vec::with_capacity(k);
        let mut gains = Vec::with_capacity(k);
        for (i, c) in prior.components().iter().enumerate() {
            let sigma = c.covariance.matrix();
            let m_sigma = m * sigma;
            let mut s = &m_sigma * m.transpose() + noise.matrix();
            symmetrize(&mut s);
            let chol = cholesky(&s, &format!("innovation covariance of component {i}"))?;
            let gain_t = chol.solve(&m_sigma);
            predicted.push(m * &c.mean);
            innovation_log_det.push(log_det_chol(&chol));
            innovation.push(chol);
            gains.push(gain_t.transpose());
        }
        let log_prior_weights = prior.components().iter().map(|c| c.weight.ln()).collect();
        Ok(Self {
            prior,
            kernel,
            noise,
            predicted,
            innovation,
            innovation_log_det,
            gains,
            log_prior_weights,
        })
    }

    pub fn prior(&self) -> &GmmModel {
        self.prior
    }

    /// `ln w_i + ln N(y; Mμ_i, S_i)` for each component.
    pub fn log_terms(&self, y: &DVector<f64>) -> Vec<f64> {
        (0..self.prior.len())
            .map(|i| {
                let r = y - &self.predicted[i];
                self.log_prior_weights[i] + gaussian_log_density(&r, &self.innovation[i], self.innovation_log_det[i])
            })
            .collect()
    }

    /// Normalized posterior weights and `log p(y)`.
    pub fn weights(&self, y: &DVector<f64>) -> (Vec<f64>, f64) {
        let terms = self.log_terms(y);
        let evidence = log_sum_exp(&terms);
        (terms.iter().map(|t| (t - evidence).exp()).collect(), evidence)
    }

    /// `μ̃_i(y) = μ_i + K_i (y − Mμ_i)`.
    pub fn component_mean(&self, i: usize, y: &DVector<f64>) -> DVector<f64> {
        &self.prior.components()[i].mean + &self.gains[i] * (y - &self.predicted[i])
    }

    /// Posterior mean `E[x | y]`.
    pub fn conditional_mean(&self, y: &DVector<f64>) -> DVector<f64> {
        let (w, _) = self.weights(y);
        let mut out = DVector::zeros(self.prior.dim());
        for (i, wi) in w.iter().enumerate() {
            if *wi > 0.0 {
                out += self.component_mean(i, y) * *wi;
            }
        }
        out
    }

    /// Posterior covariance of component `i` (independent of `y`), in Joseph
    /// form `(I − KM)Σ(I − KM)ᵀ + KΣ_wKᵀ`, symmetrized.
    pub fn component_covariance(&self, i: usize) -> DMatrix<f64> {
        let sigma = self.prior.components()[i].covariance.matrix();
        let k = &self.gains[i];
        let dim = self.prior.dim();
        let a = DMatrix::<f64>::identity(dim, dim) - k * self.kernel.matrix();
        let mut cov = &a * sigma * a.transpose() + k * self.noise.matrix() * k.transpose();
        symmetrize(&mut cov);
        cov
    }

    pub fn gain(&self, i: usize) -> &DMatrix<f64> {
        &self.gains[i]
    }

    pub fn predicted_mean(&self, i: usize) -> &DVector<f64> {
        &self.predicted[i]
    }

    /// Cholesky factor of `S_i = MΣ_iMᵀ + Σ_w`.
    pub fn innovation(&self, i: usize) -> &Cholesky<f64, Dyn> {
        &self.innovation[i]
    }
}

/// Posterior mixture after observing `y = Mx + w`.
pub fn update_posterior(
    prior: &GmmModel,
    kernel: &SensingKernel,
    noise: &NoiseModel,
    y: &DVector<f64>,
) -> Result<PosteriorGmm> {
    if y.len() != kernel.rows() {
        return Err(Error::Shape(format!("y has length {}, kernel has {} rows", y.len(), kernel.rows())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("measurement has non-finite entries".into()));
    }
    for (i, c) in prior.components().iter().enumerate() {
        cholesky(c.covariance.matrix(), &format!("prior component {i} covariance"))?;
    }
    let model = MeasurementModel::new(prior, kernel, noise)?;
    let terms = model.log_terms(y);
    let evidence_log = log_sum_exp(&terms);
    let components = terms
        .iter()
        .enumerate()
        .map(|(i, t)| PosteriorComponent {
            log_weight: t - evidence_log,
            mean: model.component_mean(i, y),
            covariance: model.component_covariance(i),
        })
        .collect();
    Ok(PosteriorGmm { components, evidence_log, measurement_count: kernel.rows() })
}

pub fn posterior_mean(post: &PosteriorGmm) -> DVector<f64> {
    post.mean()
}

pub fn dominant_component(post: &PosteriorGmm) -> usize {
    post.dominant_component()
}

pub fn sequential_update(post: &PosteriorGmm, new_row: &DVector<f64>, noise_var: f64, y_new: f64) -> Result<PosteriorGmm> {
    post.observe(new_row, noise_var, y_new)
}

impl PosteriorGmm {
    /// The zero-measurement posterior, equal to the prior.
    pub fn from_prior(prior: &GmmModel) -> Self {
        let components = prior
            .components()
            .iter()
            .map(|c| PosteriorComponent {
                log_weight: c.weight.ln(),
                mean: c.mean.clone(),
                covariance: c.covariance.matrix().clone(),
            })
            .collect();
        Self { components, evidence_log: 0.0, measurement_count: 0 }
    }

    pub fn components(&self) -> &[PosteriorComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(PosteriorComponent::weight).collect()
    }

    /// `log p(y_1..y_k)` accumulated over all measurements so far.
    pub fn evidence_log(&self) -> f64 {
        self.evidence_log
    }

    pub fn measurement_count(&self) -> usize {
        self.measurement_count
    }

    /// `Σ_i w̃_i μ̃_i`.
    pub fn mean(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for c in &self.components {
            let w = c.weight();
            if w > 0.0 {
                out += &c.mean * w;
            }
        }
        out
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn dominant_component(&self) -> usize {
        let mut best = 0;
        for (i, c) in self.components.iter().enumerate() {
            if c.log_weight > self.components[best].log_weight {
                best = i;
            }
        }
        best
    }

    /// Incorporate one more scalar measurement `y = rᵀx + w`, `w ~ N(0, σ²)`.
    pub fn observe(&self, row: &DVector<f64>, noise_var: f64, y: f64) -> Result<Self> {
        if row.len() != self.dim() {
            return Err(Error::Shape(format!("row has length {}, posterior has dimension {}", row.len(), self.dim())));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidInput(format!("noise variance must be positive, got {noise_var}")));
        }
        if row.norm() == 0.0 {
            return Err(Error::DegenerateRow);
        }
        if !y.is_finite() || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite measurement".into()));
        }
        let mut terms = Vec::with_capacity(self.len());
        let mut components = Vec::with_capacity(self.len());
        for c in &self.components {
            let g = &c.covariance * row;
            let s = row.dot(&g) + noise_var;
            let resid = y - row.dot(&c.mean);
            terms.push(c.log_weight - 0.5 * (LN_2PI + s.ln() + resid * resid / s));
            let mean = &c.mean + &g * (resid / s);
            let mut covariance = &c.covariance - &g * g.transpose() / s;
            symmetrize(&mut covariance);
            components.push(PosteriorComponent { log_weight: 0.0, mean, covariance });
        }
        let step_evidence = log_sum_exp(&terms);
        for (c, t) in components.iter_mut().zip(&terms) {
            c.log_weight = t - step_evidence;
        }
        Ok(Self {
            components,
            evidence_log: self.evidence_log + step_evidence,
            measurement_count: self.measurement_count + 1,
        })
    }

    /// The posterior as a mixture model (e.g. to design against it).
    pub fn to_gmm(&self) -> Result<GmmModel> {
        let weights = self.weights();
        let total: f64 = weights.iter().sum();
        let components = self
            .components
            .iter()
            .zip(&weights)
            .map(|(c, w)| GaussianComponent::new(w / total, c.mean.clone(), c.covariance.clone()))
            .collect::<Result<Vec<_>>>()?;
        GmmModel::new(components)
    }
}

/// File form: the mixture schema plus `evidence_log` and `k`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PosteriorRecord {
    pub dim: usize,
    #[serde(rename = "K")]
    pub k_components: usize,
    pub components: Vec<ComponentRecord>,
    pub evidence_log: f64,
    pub k: usize,
}

impl From<&PosteriorGmm> for PosteriorRecord {
    fn from(p: &PosteriorGmm) -> Self {
        PosteriorRecord {
            dim: p.dim(),
            k_components: p.len(),
            components: p
                .components
                .iter()
                .map(|c| ComponentRecord {
                    weight: c.weight(),
                    mean: c.mean.iter().copied().collect(),
                    covariance: matrix_to_rows(&c.covariance),
                })
                .collect(),
            evidence_log: p.evidence_log,
            k: p.measurement_count,
        }
    }
}

impl TryFrom<&PosteriorRecord> for PosteriorGmm {
    type Error = Error;

    fn try_from(rec: &PosteriorRecord) -> Result<Self> {
        if rec.components.len() != rec.k_components {
            return Err(Error::Parse("component count mismatch".into()));
        }
        let components = rec
            .components
            .iter()
            .map(|c| {
                Ok(PosteriorComponent {
                    log_weight: c.weight.ln(),
                    mean: DVector::from_column_slice(&c.mean),
                    covariance: rows_to_matrix(&c.covariance, rec.dim)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorGmm { components, evidence_log: rec.evidence_log, measurement_count: rec.k })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GaussianComponent;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn plus_minus_ten() -> GmmModel {
        GmmModel::new(vec![
            GaussianComponent::new(0.5, DVector::from_vec(vec![-10.0]), scalar(1.0)).unwrap(),
            GaussianComponent::new(0.5, DVector::from_vec(vec![10.0]), scalar(1.0)).unwrap(),
        ])
        .unwrap()
    }

    fn random_gmm(k: usize, m: usize, seed: u64) -> GmmModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(0.2, 1.0).unwrap();
        let raw: Vec<f64> = (0..k).map(|_| u.sample(&mut rng)).collect();
        let total: f64 = raw.iter().sum();
        let comps = raw
            .iter()
            .map(|w| {
                let a: DMatrix<f64> = DMatrix::from_fn(m, m, |_, _| StandardNormal.sample(&mut rng));
                let cov = &a * a.transpose() / m as f64 + DMatrix::identity(m, m) * 0.1;
                let mean = DVector::from_fn(m, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); 2.0 * z });
                GaussianComponent::new(w / total, mean, cov).unwrap()
            })
            .collect();
        GmmModel::new(comps).unwrap()
    }

    #[test]
    fn single_component_matches_joint_gaussian_conditioning() {
        // Oracle: condition the joint Gaussian of (x, y) via its Schur complement.
        let prior = random_gmm(1, 3, 5);
        let c = &prior.components()[0];
        let kernel = SensingKernel::from_rows(2, 3, &[1.0, 0.5, -0.2, 0.0, 1.0, 0.7]).unwrap();
        let noise = NoiseModel::new(DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2])).unwrap();
        let y = DVector::from_vec(vec![0.4, -1.3]);

        let m = kernel.matrix();
        let sxx = c.covariance.matrix().clone();
        let sxy = &sxx * m.transpose();
        let syy = m * &sxx * m.transpose() + noise.matrix();
        let syy_inv = syy.clone().try_inverse().unwrap();
        let oracle_mean = &c.mean + &sxy * &syy_inv * (&y - m * &c.mean);
        let oracle_cov = &sxx - &sxy * &syy_inv * sxy.transpose();

        let post = update_posterior(&prior, &kernel, &noise, &y).unwrap();
        assert!((post.mean() - oracle_mean).amax() < 1e-12);
        assert!((&post.components()[0].covariance - oracle_cov).amax() < 1e-12);
        assert!((post.weights()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn information_form_agrees_with_gain_form() {
        let prior = random_gmm(3, 4, 8);
        let kernel = SensingKernel::from_rows(2, 4, &[1.0, 0.0, 0.5, 0.2, -0.3, 1.0, 0.0, 0.4]).unwrap();
        let noise = NoiseModel::isotropic(2, 0.05).unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let post = update_posterior(&prior, &kernel, &noise, &y).unwrap();
        let m = kernel.matrix();
        for (c, p) in prior.components().iter().zip(post.components()) {
            let sigma_inv = c.covariance.matrix().clone().try_inverse().unwrap();
            let precision = m.transpose() * noise.precision() * m + &sigma_inv;
            let cov = precision.try_inverse().unwrap();
            let mean = &cov * (m.transpose() * noise.precision() * &y + &sigma_inv * &c.mean);
            assert!((&p.covariance - &cov).amax() < 1e-10);
            assert!((&p.mean - &mean).amax() < 1e-10);
        }
    }

    #[test]
    fn noiseless_identity_recovers_measurement() {
        let prior = random_gmm(3, 3, 2);
        let kernel = SensingKernel::new(DMatrix::identity(3, 3)).unwrap();
        let noise = NoiseModel::isotropic(3, 1e-12).unwrap();
        let y = DVector::from_vec(vec![0.3, -2.0, 5.0]);
        let post = update_posterior(&prior, &kernel, &noise, &y).unwrap();
        for c in post.components() {
            assert!((&c.mean - &y).amax() < 1e-4);
        }
    }

    #[test]
    fn far_components_are_resolved() {
        let prior = plus_minus_ten();
        let kernel = SensingKernel::from_rows(1, 1, &[1.0]).unwrap();
        let noise = NoiseModel::isotropic(1, 1e-6).unwrap();
        let post = update_posterior(&prior, &kernel, &noise, &DVector::from_vec(vec![10.0])).unwrap();
        assert!(post.weights()[1] > 1.0 - 1e-8);
        assert_eq!(post.dominant_component(), 1);
        // The losing component is vanishingly small but retained.
        assert!(post.components()[0].log_weight < -150.0);
        assert!(post.components()[0].log_weight.is_finite());
    }

    #[test]
    fn evidence_matches_direct_sum() {
        let prior = random_gmm(3, 2, 4);
        let kernel = SensingKernel::from_rows(1, 2, &[0.6, -0.8]).unwrap();
        let noise = NoiseModel::isotropic(1, 0.3).unwrap();
        let y = 0.7;
        let post = update_posterior(&prior, &kernel, &noise, &DVector::from_vec(vec![y])).unwrap();
        let r = kernel.matrix().row(0).transpose();
        let direct: f64 = prior
            .components()
            .iter()
            .map(|c| {
                let mean = r.dot(&c.mean);
                let var = (r.transpose() * c.covariance.matrix() * &r)[(0, 0)] + 0.3;
                c.weight * (-(y - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
            })
            .sum();
        assert!((post.evidence_log().exp() - direct).abs() / direct < 1e-12);
    }

    #[test]
    fn posterior_mean_examples() {
        let mut post = PosteriorGmm::from_prior(&plus_minus_ten());
        assert_eq!(post.mean()[0], 0.0);
        post.components[0].log_weight = 0.25f64.ln();
        post.components[1].log_weight = 0.75f64.ln();
        post.components[0].mean[0] = 0.0;
        post.components[1].mean[0] = 4.0;
        assert!((post.mean()[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn dominant_component_ties_go_low() {
        let mut post = PosteriorGmm::from_prior(&random_gmm(3, 1, 0));
        for (c, w) in post.components.iter_mut().zip([0.1f64, 0.7, 0.2]) {
            c.log_weight = w.ln();
        }
        assert_eq!(post.dominant_component(), 1);
        let tie = PosteriorGmm::from_prior(&plus_minus_ten());
        assert_eq!(tie.dominant_component(), 0);
    }

    #[test]
    fn sequential_matches_batch() {
        let prior = random_gmm(3, 4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<DVector<f64>> = (0..5)
            .map(|_| DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let vars = [0.1, 0.2, 0.05, 0.3, 0.15];
        let ys: Vec<f64> = (0..5).map(|i| i as f64 * 0.7 - 1.0).collect();

        let mut post = PosteriorGmm::from_prior(&prior);
        for i in 0..5 {
            post = post.observe(&rows[i], vars[i], ys[i]).unwrap();
        }
        // Five rows exceed m = 4, which a SensingKernel does not allow, so the
        // batch oracle is the information-form update written out directly.
        let m = DMatrix::from_fn(5, 4, |r, c| rows[r][c]);
        let y = DVector::from_vec(ys.clone());
        let noise_prec = DMatrix::from_diagonal(&DVector::from_iterator(5, vars.iter().map(|v| 1.0 / v)));
        let mut log_terms = Vec::new();
        for (c, p) in prior.components().iter().zip(post.components()) {
            let sigma = c.covariance.matrix();
            let sigma_inv = sigma.clone().try_inverse().unwrap();
            let cov = (m.transpose() * &noise_prec * &m + &sigma_inv).try_inverse().unwrap();
            let mean = &cov * (m.transpose() * &noise_prec * &y + &sigma_inv * &c.mean);
            assert!((&p.mean - &mean).amax() < 1e-8);
            assert!((&p.covariance - &cov).amax() < 1e-8);
            let s = &m * sigma * m.transpose() + noise_prec.clone().try_inverse().unwrap();
            let r = &y - &m * &c.mean;
            let quad = (r.transpose() * s.clone().try_inverse().unwrap() * &r)[(0, 0)];
            log_terms.push(c.weight.ln() - 0.5 * (5.0 * LN_2PI + s.determinant().ln() + quad));
        }
        let evidence = log_sum_exp(&log_terms);
        for (a, t) in post.weights().iter().zip(&log_terms) {
            assert!((a - (t - evidence).exp()).abs() < 1e-8);
        }
        assert!((post.evidence_log() - evidence).abs() < 1e-8);

        // Four rows do fit in a kernel: compare with update_posterior itself.
        let mut four = PosteriorGmm::from_prior(&prior);
        for i in 0..4 {
            four = four.observe(&rows[i], vars[i], ys[i]).unwrap();
        }
        let kernel = SensingKernel::new(m.rows(0, 4).into_owned()).unwrap();
        let noise = NoiseModel::diagonal(&vars[..4]).unwrap();
        assert_eq!(noise.matrix()[(2, 2)], 0.05);
        let batch = update_posterior(&prior, &kernel, &noise, &DVector::from_column_slice(&ys[..4])).unwrap();
        for (a, b) in four.weights().iter().zip(batch.weights()) {
            assert!((a - b).abs() < 1e-8);
        }
        for (a, b) in four.components().iter().zip(batch.components()) {
            assert!((&a.mean - &b.mean).amax() < 1e-8);
            assert!((&a.covariance - &b.covariance).amax() < 1e-8);
        }
        assert!((four.evidence_log() - batch.evidence_log()).abs() < 1e-8);
        assert_eq!(post.measurement_count(), 5);
    }

    #[test]
    fn first_sequential_step_equals_single_row_batch() {
        let prior = random_gmm(2, 3, 21);
        let row = DVector::from_vec(vec![0.2, -0.4, 1.0]);
        let seq = PosteriorGmm::from_prior(&prior).observe(&row, 0.01, 1.5).unwrap();
        let kernel = SensingKernel::new(DMatrix::from_row_slice(1, 3, row.as_slice())).unwrap();
        let batch = update_posterior(&prior, &kernel, &NoiseModel::isotropic(1, 0.01).unwrap(), &DVector::from_vec(vec![1.5])).unwrap();
        for (a, b) in seq.weights().iter().zip(batch.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_row_barely_moves_weights() {
        let prior = random_gmm(3, 3, 30);
        let row = DVector::from_vec(vec![0.5, 0.5, -0.7]);
        let truth = DVector::from_vec(vec![1.0, 0.0, 2.0]);
        let y = row.dot(&truth);
        let once = PosteriorGmm::from_prior(&prior).observe(&row, 1e-8, y).unwrap();
        let twice = once.observe(&row, 1e-8, y).unwrap();
        for (a, b) in once.weights().iter().zip(twice.weights()) {
            if *a > 1e-12 {
                assert!((a - b).abs() / a < 1e-3, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_row_is_rejected() {
        let post = PosteriorGmm::from_prior(&plus_minus_ten());
        assert!(matches!(post.observe(&DVector::zeros(1), 1.0, 0.0), Err(Error::DegenerateRow)));
    }

    #[test]
    fn posterior_traces_shrink() {
        let prior = random_gmm(4, 4, 40);
        let kernel = SensingKernel::from_rows(2, 4, &[1.0, 2.0, 0.0, -1.0, 0.0, 0.3, 1.0, 0.5]).unwrap();
        let noise = NoiseModel::isotropic(2, 0.01).unwrap();
        let post = update_posterior(&prior, &kernel, &noise, &DVector::from_vec(vec![3.0, -1.0])).unwrap();
        for (c, p) in prior.components().iter().zip(post.components()) {
            assert!(p.covariance.trace() <= c.covariance.trace() + 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let prior = plus_minus_ten();
        let kernel = SensingKernel::from_rows(1, 2, &[1.0, 0.0]).unwrap();
        let noise = NoiseModel::isotropic(1, 1.0).unwrap();
        assert!(matches!(update_posterior(&prior, &kernel, &noise, &DVector::zeros(1)), Err(Error::Shape(_))));
    }

    #[test]
    fn singular_prior_is_rejected() {
        let prior = GmmModel::gaussian(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).unwrap();
        let kernel = SensingKernel::from_rows(1, 2, &[1.0, 0.0]).unwrap();
        let noise = NoiseModel::isotropic(1, 1.0).unwrap();
        assert!(matches!(
            update_posterior(&prior, &kernel, &noise, &DVector::zeros(1)),
            Err(Error::SingularCovariance(_))
        ));
    }

    #[test]
    fn record_round_trip() {
        let prior = random_gmm(2, 2, 50);
        let post = PosteriorGmm::from_prior(&prior).observe(&DVector::from_vec(vec![1.0, 0.0]), 0.1, 0.3).unwrap();
        let rec = PosteriorRecord::from(&post);
        let text = serde_json::to_string(&rec).unwrap();
        let back: PosteriorRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.k, 1);
        let again = PosteriorGmm::try_from(&back).unwrap();
        assert!((again.mean() - post.mean()).amax() < 1e-12);
    }
}

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, gaussian_log_density, log_det_chol, log_sum_exp, SpectrumOrder};
use crate::models::CovarianceSpectrum;

/// One weighted multivariate normal of a mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: CovarianceSpectrum,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let covariance = CovarianceSpectrum::new(covariance, SpectrumOrder::Descending)?;
        Ok(Self { weight, mean, covariance })
    }
}

/// Gaussian mixture model `p(x) = Σ_i p(i) N(x; μ_i, Σ_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    components: Vec<GaussianComponent>,
    dim: usize,
}

impl GmmModel {
    /// Weights must be nonnegative and sum to one within `1e-9`.
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidInput("a mixture needs at least one component".into()))?;
        let dim = first.mean.len();
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != dim || c.covariance.dim() != dim {
                return Err(Error::Shape(format!("component {i} does not have dimension {dim}")));
            }
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidInput(format!("component {i} has invalid weight {}", c.weight)));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("component {i} has a non-finite mean")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self { components, dim })
    }

    /// A one-component model.
    pub fn gaussian(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![GaussianComponent::new(1.0, mean, covariance)?])
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Mixture mean `Σ p(i) μ_i`.
    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim), |acc, c| acc + &c.mean * c.weight)
    }

    /// Mixture covariance, including the scatter of the component means.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for c in &self.components {
            let d = &c.mean - &mu;
            cov += (c.covariance.matrix() + &d * d.transpose()) * c.weight;
        }
        crate::linalg::symmetrize(&mut cov);
        cov
    }

    /// `n` i.i.d. draws as the rows of an `n×m` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let sampler = GmmSampler::new(self);
        let mut out = DMatrix::zeros(n, self.dim);
        for r in 0..n {
            let (_, x) = sampler.draw(rng);
            out.row_mut(r).copy_from(&x.transpose());
        }
        out
    }

    /// `log p(x)`, computed with a log-sum-exp over components.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        GmmDensity::new(self)?.log_density(x)
    }
}

/// Draws `(component index, sample)` pairs from a mixture.
pub struct GmmSampler<'a> {
    model: &'a GmmModel,
    index: WeightedIndex<f64>,
    factors: Vec<DMatrix<f64>>,
}

impl<'a> GmmSampler<'a> {
    pub fn new(model: &'a GmmModel) -> Self {
        let index = WeightedIndex::new(model.weights()).expect("weights validated at construction");
        let factors = model.components.iter().map(|c| c.covariance.sqrt_factor()).collect();
        Self { model, index, factors }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, DVector<f64>) {
        let k = self.index.sample(rng);
        let z = DVector::from_fn(self.model.dim, |_, _| StandardNormal.sample(rng));
        (k, &self.model.components[k].mean + &self.factors[k] * z)
    }
}

/// Cached Cholesky factors for repeated density evaluation.
pub struct GmmDensity<'a> {
    model: &'a GmmModel,
    chols: Vec<Cholesky<f64, Dyn>>,
    log_dets: Vec<f64>,
}

impl<'a> GmmDensity<'a> {
    pub fn new(model: &'a GmmModel) -> Result<Self> {
        let mut chols = Vec::with_capacity(model.len());
        let mut log_dets = Vec::with_capacity(model.len());
        for (i, c) in model.components.iter().enumerate() {
            let chol = cholesky(c.covariance.matrix(), &format!("component {i} covariance"))?;
            log_dets.push(log_det_chol(&chol));
            chols.push(chol);
        }
        Ok(Self { model, chols, log_dets })
    }

    /// `log p(i) + log N(x; μ_i, Σ_i)` for every component.
    pub fn component_log_terms(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        if x.len() != self.model.dim {
            return Err(Error::Shape(format!("point has dimension {}, model has {}", x.len(), self.model.dim)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("point has non-finite entries".into()));
        }
        Ok(self
            .model
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let r = x - &c.mean;
                c.weight.ln() + gaussian_log_density(&r, &self.chols[i], self.log_dets[i])
            })
            .collect())
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(log_sum_exp(&self.component_log_terms(x)?))
    }
}

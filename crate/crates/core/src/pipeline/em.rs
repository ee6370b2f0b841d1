//! Expectation-maximization for Gaussian mixtures with a ridge on every
//! covariance and k-means++ seeding.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrize, LN_2PI};
use crate::models::{GaussianComponent, GmmModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub components: usize,
    pub seed: u64,
    /// Added to the diagonal of every covariance in each M-step.
    pub reg: f64,
    /// Stop once the mean log-likelihood per sample gains less than this.
    pub tol: f64,
    pub max_iters: usize,
}

impl EmConfig {
    pub fn new(components: usize, seed: u64, reg: f64) -> Self {
        Self { components, seed, reg, tol: 1e-6, max_iters: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub model: GmmModel,
    /// Mean training log-likelihood per sample at each parameter iterate,
    /// starting with the initialization. The last entry belongs to `model`.
    pub log_likelihood: Vec<f64>,
    /// Number of M-steps taken.
    pub iterations: usize,
    pub converged: bool,
}

/// Fit a `k`-component mixture to the rows of `patches` (`n×m`).
pub fn train_gmm_em(patches: &DMatrix<f64>, k: usize, seed: u64, reg: f64) -> Result<GmmModel> {
    Ok(train_gmm_em_with(patches, &EmConfig::new(k, seed, reg))?.model)
}

pub fn train_gmm_em_with(patches: &DMatrix<f64>, cfg: &EmConfig) -> Result<EmFit> {
    let (n, m) = patches.shape();
    let k = cfg.components;
    if k == 0 || m == 0 {
        return Err(Error::InvalidInput("need at least one component and one dimension".into()));
    }
    if n < 10 * k {
        return Err(Error::InsufficientData { needed: 10 * k, got: n });
    }
    if !(cfg.reg > 0.0 && cfg.reg.is_finite()) {
        return Err(Error::InvalidInput(format!("reg must be positive, got {}", cfg.reg)));
    }
    if patches.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("training data has non-finite entries".into()));
    }
    // One sample per column.
    let x = patches.transpose();
    let mut params = initialize(&x, k, cfg)?;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let (resp, ll) = e_step(&x, &params)?;
        let gain = history.last().map(|prev| ll - prev);
        history.push(ll);
        if gain.is_some_and(|g| g < cfg.tol) {
            converged = true;
            break;
        }
        if iterations == cfg.max_iters {
            break;
        }
        params = m_step(&x, &resp, &params, cfg.reg);
        iterations += 1;
    }
    let components = params
        .into_iter()
        .map(|p| GaussianComponent::new(p.weight, p.mean, p.covariance))
        .collect::<Result<Vec<_>>>()?;
    Ok(EmFit { model: GmmModel::new(components)?, log_likelihood: history, iterations, converged })
}

#[derive(Debug, Clone)]
struct Params {
    weight: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

fn sample_mean_cov(x: &DMatrix<f64>, cols: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let m = x.nrows();
    let mut mean = DVector::zeros(m);
    for &j in cols {
        mean += x.column(j);
    }
    mean /= cols.len() as f64;
    let mut d = DMatrix::zeros(m, cols.len());
    for (c, &j) in cols.iter().enumerate() {
        d.set_column(c, &(x.column(j) - &mean));
    }
    let mut cov = &d * d.transpose() / cols.len() as f64;
    symmetrize(&mut cov);
    (mean, cov)
}

/// k-means++ centers, then one hard assignment to set weights, means and
/// covariances. Clusters with fewer than two members fall back to the
/// global covariance.
fn initialize(x: &DMatrix<f64>, k: usize, cfg: &EmConfig) -> Result<Vec<Params>> {
    let (m, n) = x.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers = vec![rng.random_range(0..n)];
    let dist = |j: usize, c: usize| (x.column(j) - x.column(c)).norm_squared();
    let mut nearest: Vec<f64> = (0..n).map(|j| dist(j, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (j, d) in nearest.iter().enumerate() {
                if u < *d {
                    pick = j;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(next);
        for (j, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist(j, next));
        }
    }
    let mut members = vec![Vec::new(); k];
    for j in 0..n {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, &idx) in centers.iter().enumerate() {
            let d = dist(j, idx);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        members[best].push(j);
    }
    let all: Vec<usize> = (0..n).collect();
    let (_, global_cov) = sample_mean_cov(x, &all);
    let ridge = DMatrix::identity(m, m) * cfg.reg;
    let sizes: Vec<f64> = members.iter().map(|c| c.len().max(1) as f64).collect();
    let total: f64 = sizes.iter().sum();
    Ok(members
        .iter()
        .zip(&centers)
        .zip(&sizes)
        .map(|((cols, &center), size)| {
            let (mean, cov) = if cols.len() >= 2 {
                sample_mean_cov(x, cols)
            } else {
                (x.column(center).into_owned(), global_cov.clone())
            };
            Params { weight: size / total, mean, covariance: cov + &ridge }
        })
        .collect())
}

/// Responsibilities (`n×K`) and the mean log-likelihood per sample.
fn e_step(x: &DMatrix<f64>, params: &[Params]) -> Result<(DMatrix<f64>, f64)> {
    let (m, n) = x.shape();
    let k = params.len();
    let mut log_terms = DMatrix::from_element(n, k, f64::NEG_INFINITY);
    for (c, p) in params.iter().enumerate() {
        if p.weight <= 0.0 {
            continue;
        }
        let chol = cholesky(&p.covariance, &format!("EM component {c} covariance"))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut d = x.clone();
        for mut col in d.column_iter_mut() {
            col -= &p.mean;
        }
        chol.l().solve_lower_triangular_mut(&mut d);
        let base = p.weight.ln() - 0.5 * (m as f64 * LN_2PI + log_det);
        for (j, col) in d.column_iter().enumerate() {
            log_terms[(j, c)] = base - 0.5 * col.norm_squared();
        }
    }
    let mut total = 0.0;
    for j in 0..n {
        let row = log_terms.row(j);
        let max = row.max();
        let lse = max + row.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        total += lse;
        for c in 0..k {
            log_terms[(j, c)] = (log_terms[(j, c)] - lse).exp();
        }
    }
    Ok((log_terms, total / n as f64))
}

fn m_step(x: &DMatrix<f64>, resp: &DMatrix<f64>, old: &[Params], reg: f64) -> Vec<Params> {
    let (m, n) = x.shape();
    let counts: Vec<f64> = resp.column_iter().map(|c| c.sum()).collect();
    let total: f64 = counts.iter().sum();
    let ridge = DMatrix::identity(m, m) * reg;
    old.iter()
        .zip(&counts)
        .enumerate()
        .map(|(c, (prev, &nk))| {
            let weight = nk / total;
            // A component with (numerically) no mass keeps its shape.
            if nk <= 1e-10 * n as f64 {
                return Params { weight, mean: prev.mean.clone(), covariance: prev.covariance.clone() };
            }
            let r = resp.column(c);
            let mean = x * r / nk;
            let mut d = x.clone();
            for (j, mut col) in d.column_iter_mut().enumerate() {
                col -= &mean;
                col *= r[j].sqrt();
            }
            let mut covariance = &d * d.transpose() / nk + &ridge;
            symmetrize(&mut covariance);
            Params { weight, mean, covariance }
        })
        .collect()
}

//! Sequential, row-by-row kernel design. After each scalar measurement the
//! posterior is updated and the next unit-norm row is designed against it.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DesignConfig;
use crate::error::{Error, Result};
use crate::info::{renyi2_entropy_mixture, renyi2_with_gradient, row_mmse_product_mc, row_mutual_information, MixtureRef};
use crate::linalg::{fix_sign, sym_eigen, SpectrumOrder};
use crate::models::GmmModel;
use crate::posterior::PosteriorGmm;
use crate::seed::{derive_seed, stream_rng};

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

const GRADIENT_STREAM: u64 = 0x524F_5747;
const ROW_STREAM: u64 = 0x524F_5753;
const NOISE_STREAM: u64 = 0x4E4F_4953;
const DESIGN_STREAM: u64 = 0x4445_5349;

/// How each row of an online acquisition is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Leading eigenvector of the dominant posterior component.
    Pds,
    /// Gradient ascent on the single-row mutual information.
    Pv,
    /// Gradient ascent on the quadratic Rényi entropy of the measurement.
    Renyi,
    /// I.i.d. Gaussian rows, normalized.
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Pds, Strategy::Pv, Strategy::Renyi, Strategy::Random];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Pds => "pds",
            Strategy::Pv => "pv",
            Strategy::Renyi => "renyi",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parse(format!("unknown strategy '{s}'")))
    }
}

/// Settings of an online acquisition beyond the strategy itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    /// Row optimizer settings for PV and Rényi. `seed` is ignored; each
    /// step derives its own from the acquisition seed.
    pub design: DesignConfig,
    /// PDS only: take this many random rows first, then fix the most
    /// probable component and use the leading eigenvectors of its prior
    /// covariance for the remaining rows, without further model updates.
    pub original_pds_warmup: Option<usize>,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self { design: DesignConfig::default(), original_pds_warmup: None }
    }
}

/// Outcome of a single-row ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct RowDesign {
    pub row: DVector<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective at every accepted iterate of the winning restart.
    pub history: Vec<f64>,
    pub restart: usize,
}

/// Which single-row criterion to ascend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowObjective {
    MutualInformation,
    Renyi2,
}

/// Record of one online acquisition. Entry `k` of every history is the
/// state after the `(k+1)`-th measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionTrace {
    pub strategy: Strategy,
    pub rows: Vec<DVector<f64>>,
    pub measurements: Vec<f64>,
    pub posterior_weights_history: Vec<Vec<f64>>,
    pub reconstruction_history: Vec<DVector<f64>>,
    /// `‖x − x̂_k‖² / dim`.
    pub mse_history: Vec<f64>,
}

impl AcquisitionTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The rows stacked into an `ℓ×dim` kernel matrix.
    pub fn kernel_matrix(&self) -> DMatrix<f64> {
        let cols = self.rows.first().map_or(0, |r| r.len());
        DMatrix::from_fn(self.rows.len(), cols, |i, j| self.rows[i][j])
    }

    pub fn final_estimate(&self) -> Option<&DVector<f64>> {
        self.reconstruction_history.last()
    }

    /// CSV with header `step,strategy,max_weight,dominant_component,mse_so_far`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,strategy,max_weight,dominant_component,mse_so_far\n");
        for (k, (w, mse)) in self.posterior_weights_history.iter().zip(&self.mse_history).enumerate() {
            let (arg, max) = argmax(w);
            let _ = writeln!(out, "{},{},{max},{arg},{mse}", k + 1, self.strategy);
        }
        out
    }
}

fn argmax(w: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, v) in w.iter().enumerate() {
        if *v > w[best] {
            best = i;
        }
    }
    (best, w.get(best).copied().unwrap_or(f64::NAN))
}

fn leading_eigenvector(cov: &DMatrix<f64>) -> Option<DVector<f64>> {
    let (values, vectors) = sym_eigen(cov, SpectrumOrder::Descending);
    (values.len() > 0 && values[0] > 0.0).then(|| vectors.column(0).into_owned())
}

/// Leading eigenvector of the covariance of the most probable posterior
/// component, largest-magnitude entry positive.
pub fn pds_next_row(post: &PosteriorGmm) -> Result<DVector<f64>> {
    if post.is_empty() {
        return Err(Error::DegeneratePosterior("posterior has no components".into()));
    }
    let i = post.dominant_component();
    leading_eigenvector(&post.components()[i].covariance)
        .ok_or_else(|| Error::DegeneratePosterior(format!("component {i} has zero covariance")))
}

/// A unit row with i.i.d. standard normal entries before normalization.
pub fn random_row<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Covariance of the whole mixture, `Σ w_i (Σ_i + μ_i μ_iᵀ) − μ μᵀ`.
fn mixture_covariance(post: &PosteriorGmm) -> DMatrix<f64> {
    let dim = post.dim();
    let mean = post.mean();
    let mut cov = DMatrix::zeros(dim, dim);
    for c in post.components() {
        let w = c.weight();
        if w > 0.0 {
            let d = &c.mean - &mean;
            cov += (&c.covariance + &d * d.transpose()) * w;
        }
    }
    cov
}

fn as_kernel(r: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, r.len(), r.as_slice())
}

struct RowProblem<'a> {
    mix: MixtureRef<'a>,
    noise_var: f64,
    objective: RowObjective,
    cfg: &'a DesignConfig,
}

impl RowProblem<'_> {
    fn value(&self, r: &DVector<f64>) -> Result<f64> {
        match self.objective {
            RowObjective::MutualInformation => row_mutual_information(&self.mix, r, self.noise_var),
            RowObjective::Renyi2 => renyi2_entropy_mixture(&self.mix, &as_kernel(r), &self.noise_cov()),
        }
    }

    fn gradient(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        match self.objective {
            RowObjective::MutualInformation => {
                let er = row_mmse_product_mc(
                    &self.mix,
                    r,
                    self.noise_var,
                    self.cfg.mc_samples,
                    derive_seed(self.cfg.seed, GRADIENT_STREAM),
                )?;
                Ok(er / self.noise_var)
            }
            RowObjective::Renyi2 => {
                let (_, g) = renyi2_with_gradient(&self.mix, &as_kernel(r), &self.noise_cov())?;
                Ok(g.row(0).transpose())
            }
        }
    }

    fn noise_cov(&self) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.noise_var)
    }

    fn ascend(&self, init: DVector<f64>, restart: usize) -> Result<RowDesign> {
        let mut row = init;
        let mut f = self.value(&row)?;
        let mut history = vec![f];
        let mut step = self.cfg.step_size;
        let mut converged = false;
        let mut iterations = 0;
        if step > 0.0 {
            while iterations < self.cfg.max_iters {
                let g = self.gradient(&row)?;
                let tangent = &g - &row * g.dot(&row);
                if tangent.norm() <= self.cfg.tol {
                    converged = true;
                    break;
                }
                iterations += 1;
                let mut accepted = false;
                for _ in 0..MAX_HALVINGS {
                    let moved = &row + &g * step;
                    let n = moved.norm();
                    if !(n > 0.0 && n.is_finite()) {
                        step *= 0.5;
                        continue;
                    }
                    let candidate = moved / n;
                    let fc = self.value(&candidate)?;
                    if fc >= f && fc >= f + ARMIJO_C * g.dot(&(&candidate - &row)) {
                        row = candidate;
                        f = fc;
                        history.push(f);
                        step *= 2.0;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
        }
        fix_sign(&mut row);
        Ok(RowDesign { row, objective: f, converged, iterations, history, restart })
    }
}

/// Best-of-restarts ascent of one unit-norm row against the posterior.
/// Restart 0 starts from the leading eigenvector of the mixture covariance
/// when `cfg.waterfill_init` is set; the others from random unit rows.
pub fn design_row(post: &PosteriorGmm, noise_var: f64, objective: RowObjective, cfg: &DesignConfig) -> Result<RowDesign> {
    cfg.validate()?;
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(Error::InvalidInput(format!("noise variance must be positive, got {noise_var}")));
    }
    if post.is_empty() || post.dim() == 0 {
        return Err(Error::DegeneratePosterior("posterior has no components".into()));
    }
    let problem = RowProblem { mix: MixtureRef::from(post), noise_var, objective, cfg };
    let init = |r: usize| {
        if r == 0 && cfg.waterfill_init {
            if let Some(v) = leading_eigenvector(&mixture_covariance(post)) {
                return v;
            }
        }
        random_row(post.dim(), &mut stream_rng(cfg.seed, r as u64))
    };
    let results = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| problem.ascend(init(r), r))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.objective > results[best].objective {
            best = i;
        }
    }
    Ok(results.into_iter().nth(best).expect("at least one restart"))
}

/// Next row maximizing `I(x; rᵀx + w)` under the posterior, with the
/// gradient `E r / σ²` estimated by Monte Carlo.
pub fn pv_next_row(post: &PosteriorGmm, noise_var: f64, cfg: &DesignConfig) -> Result<DVector<f64>> {
    Ok(design_row(post, noise_var, RowObjective::MutualInformation, cfg)?.row)
}

/// Next row maximizing the quadratic Rényi entropy of `rᵀx + w`.
pub fn renyi_next_row(post: &PosteriorGmm, noise_var: f64, cfg: &DesignConfig) -> Result<DVector<f64>> {
    Ok(design_row(post, noise_var, RowObjective::Renyi2, cfg)?.row)
}

/// Sense `x_true` one row at a time with [`OnlineConfig::default`].
pub fn run_online_acquisition(
    x_true: &DVector<f64>,
    prior: &GmmModel,
    noise_var: f64,
    strategy: Strategy,
    budget: usize,
    seed: u64,
) -> Result<AcquisitionTrace> {
    run_online_acquisition_with(x_true, prior, noise_var, strategy, budget, seed, &OnlineConfig::default())
}

/// Sense `x_true` one row at a time: design a row from the current
/// posterior, measure `y_k = rᵀx + w_k`, update, record.
pub fn run_online_acquisition_with(
    x_true: &DVector<f64>,
    prior: &GmmModel,
    noise_var: f64,
    strategy: Strategy,
    budget: usize,
    seed: u64,
    cfg: &OnlineConfig,
) -> Result<AcquisitionTrace> {
    let dim = prior.dim();
    if x_true.len() != dim {
        return Err(Error::Shape(format!("signal has length {}, prior has dimension {dim}", x_true.len())));
    }
    if budget > dim {
        return Err(Error::Shape(format!("budget {budget} exceeds dimension {dim}")));
    }
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(Error::InvalidInput(format!("noise variance must be positive, got {noise_var}")));
    }
    let mut row_rng = stream_rng(seed, ROW_STREAM);
    let mut noise_rng = stream_rng(seed, NOISE_STREAM);
    let sd = noise_var.sqrt();
    let mut post = PosteriorGmm::from_prior(prior);
    let mut frozen: Option<DMatrix<f64>> = None;
    let mut trace = AcquisitionTrace {
        strategy,
        rows: Vec::with_capacity(budget),
        measurements: Vec::with_capacity(budget),
        posterior_weights_history: Vec::with_capacity(budget),
        reconstruction_history: Vec::with_capacity(budget),
        mse_history: Vec::with_capacity(budget),
    };
    for k in 0..budget {
        let mut design = cfg.design.clone();
        design.seed = derive_seed(seed, DESIGN_STREAM ^ k as u64);
        let row = match (strategy, cfg.original_pds_warmup) {
            (Strategy::Pds, Some(warmup)) if k < warmup => random_row(dim, &mut row_rng),
            (Strategy::Pds, Some(warmup)) => {
                let vectors = frozen.get_or_insert_with(|| {
                    let c = &prior.components()[post.dominant_component()];
                    sym_eigen(c.covariance.matrix(), SpectrumOrder::Descending).1
                });
                vectors.column(k - warmup).into_owned()
            }
            (Strategy::Pds, None) => pds_next_row(&post)?,
            (Strategy::Pv, _) => pv_next_row(&post, noise_var, &design)?,
            (Strategy::Renyi, _) => renyi_next_row(&post, noise_var, &design)?,
            (Strategy::Random, _) => random_row(dim, &mut row_rng),
        };
        let y = row.dot(x_true) + sd * noise_rng.sample::<f64, _>(StandardNormal);
        post = post.observe(&row, noise_var, y)?;
        let estimate = post.mean();
        trace.mse_history.push((x_true - &estimate).norm_squared() / dim as f64);
        trace.posterior_weights_history.push(post.weights());
        trace.reconstruction_history.push(estimate);
        trace.rows.push(row);
        trace.measurements.push(y);
    }
    Ok(trace)
}

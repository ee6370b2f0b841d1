//! Offline kernel design under the power constraint `tr(MMᵀ) = ℓ`:
//! closed-form waterfilling for Gaussian sources, projected gradient ascent
//! on mutual information or quadratic Rényi entropy for mixtures, a
//! stationarity (KKT) check, and the random baseline.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{
    gaussian_mmse, mi_gradient, mmse_matrix_mc_with, mutual_information, renyi2_gradient_gmm,
    renyi2_entropy_gmm, MmseEstimator,
};
use crate::linalg::{frob_dot, SpectrumOrder, TIE_TOL};
use crate::models::{CovarianceSpectrum, GmmModel, NoiseModel, SensingKernel};
use crate::seed::derive_seed;

/// Sufficient-increase constant of the backtracking line search.
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// Seed streams reserved for the objective and gradient estimates.
const OBJECTIVE_STREAM: u64 = 0x4F42_4A45;
const GRADIENT_STREAM: u64 = 0x4752_4144;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    /// Initial step `γ`; adapted by the line search. Zero disables ascent.
    pub step_size: f64,
    pub max_iters: usize,
    pub restarts: usize,
    /// Stop once the gradient component tangent to the power sphere has
    /// Frobenius norm below this.
    pub tol: f64,
    pub mc_samples: usize,
    pub seed: u64,
    /// Estimator for the MMSE matrix in mixture gradients.
    pub estimator: MmseEstimator,
    /// Use the waterfilling kernel of the mixture covariance as restart 0.
    pub waterfill_init: bool,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            max_iters: 200,
            restarts: 5,
            tol: 1e-6,
            mc_samples: 20_000,
            seed: 0,
            estimator: MmseEstimator::Conditional,
            waterfill_init: true,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidInput(format!("step size must be nonnegative, got {}", self.step_size)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 || self.restarts == 0 {
            return Err(Error::InvalidInput("max_iters and restarts must be positive".into()));
        }
        if self.mc_samples < crate::info::MIN_MC_SAMPLES {
            return Err(Error::InvalidInput(format!("mc_samples must be at least {}", crate::info::MIN_MC_SAMPLES)));
        }
        Ok(())
    }
}

/// Outcome of a gradient-ascent design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub kernel: SensingKernel,
    /// Objective at `kernel` (nats), as estimated during the run.
    pub objective: f64,
    /// Whether the tangent-gradient stopping rule was met.
    pub converged: bool,
    pub iterations: usize,
    /// Objective at every accepted iterate of the winning restart.
    pub history: Vec<f64>,
    /// Index of the winning restart.
    pub restart: usize,
}

/// Water level for ratios `r_i`: the `η` with `Σ(1/η − r_i)⁺ = budget`.
/// Infinite ratios never receive power.
pub fn waterfill_level(ratios: &[f64], budget: f64) -> Result<f64> {
    Ok(1.0 / waterfill_inverse_level(ratios, budget)?)
}

fn waterfill_inverse_level(ratios: &[f64], budget: f64) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::InvalidInput("waterfilling needs at least one ratio".into()));
    }
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::InvalidInput(format!("budget must be positive, got {budget}")));
    }
    if ratios.iter().any(|r| r.is_nan() || *r < 0.0) {
        return Err(Error::InvalidInput("ratios must be nonnegative".into()));
    }
    let lo_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    if !lo_ratio.is_finite() {
        return Err(Error::InvalidInput("at least one ratio must be finite".into()));
    }
    let filled = |t: f64| ratios.iter().map(|r| (t - r).max(0.0)).sum::<f64>();
    let (mut lo, mut hi) = (lo_ratio, lo_ratio + budget);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if filled(mid) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The active set is now settled; solve for the level exactly on it.
    let t = 0.5 * (lo + hi);
    let active: Vec<f64> = ratios.iter().copied().filter(|r| *r < t).collect();
    let exact = (budget + active.iter().sum::<f64>()) / active.len() as f64;
    Ok(if active.iter().all(|r| *r < exact) { exact } else { t })
}

/// Power allocation `λ_i = (1/η − r_i)⁺` and the level `η`.
pub fn waterfill_allocation(ratios: &[f64], budget: f64) -> Result<(Vec<f64>, f64)> {
    let t = waterfill_inverse_level(ratios, budget)?;
    Ok((ratios.iter().map(|r| (t - r).max(0.0)).collect(), 1.0 / t))
}

/// Optimal kernel for a Gaussian source: `M = U_w Λ* U_xᵀ`, pairing the
/// `i`-th largest source eigenvalue with the `i`-th smallest noise
/// eigenvalue and waterfilling the squared singular values to total `ℓ`.
pub fn design_gaussian_waterfilling(source_cov: &CovarianceSpectrum, noise: &NoiseModel, rows: usize) -> Result<SensingKernel> {
    let m = source_cov.dim();
    if rows > m {
        return Err(Error::Shape(format!("cannot design {rows} rows for dimension {m}")));
    }
    if noise.dim() != rows {
        return Err(Error::Shape(format!("noise has dimension {}, expected {rows}", noise.dim())));
    }
    if rows == 0 {
        return SensingKernel::new(DMatrix::zeros(0, m));
    }
    let sx = source_cov.reordered(SpectrumOrder::Descending);
    if sx.eigenvalues().iter().all(|l| *l <= 0.0) {
        return Err(Error::DegenerateSource);
    }
    let sw = noise.spectrum();
    let ratios: Vec<f64> = (0..rows)
        .map(|i| {
            let lx = sx.eigenvalues()[i];
            if lx > 0.0 { sw.eigenvalues()[i] / lx } else { f64::INFINITY }
        })
        .collect();
    let (lambda, _) = waterfill_allocation(&ratios, rows as f64)?;
    let mut mat = DMatrix::zeros(rows, m);
    for (i, l) in lambda.iter().enumerate() {
        if *l > 0.0 {
            mat += sw.eigenvectors().column(i) * sx.eigenvectors().column(i).transpose() * l.sqrt();
        }
    }
    SensingKernel::new(mat)?.normalize_power(1.0)
}

/// I.i.d. standard normal entries, normalized to unit power.
pub fn random_kernel(rows: usize, cols: usize, seed: u64) -> Result<SensingKernel> {
    if rows > cols {
        return Err(Error::Shape(format!("kernel must have rows <= cols, got {rows}x{cols}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mat = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let k = SensingKernel::new(mat)?;
    if rows == 0 { Ok(k) } else { k.normalize_power(1.0) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Objective {
    MutualInformation,
    Renyi2,
}

struct Problem<'a> {
    source: &'a GmmModel,
    noise: &'a NoiseModel,
    objective: Objective,
    cfg: &'a DesignConfig,
}

impl Problem<'_> {
    fn value(&self, k: &SensingKernel) -> Result<f64> {
        match self.objective {
            Objective::MutualInformation => Ok(mutual_information(
                self.source,
                k,
                self.noise,
                self.cfg.mc_samples,
                derive_seed(self.cfg.seed, OBJECTIVE_STREAM),
            )?
            .value),
            Objective::Renyi2 => renyi2_entropy_gmm(self.source, k, self.noise),
        }
    }

    fn gradient(&self, k: &SensingKernel) -> Result<DMatrix<f64>> {
        match self.objective {
            Objective::MutualInformation => {
                let e = if self.source.len() == 1 {
                    gaussian_mmse(k, &self.source.components()[0].covariance, self.noise)?
                } else {
                    mmse_matrix_mc_with(
                        self.source,
                        k,
                        self.noise,
                        self.cfg.mc_samples,
                        derive_seed(self.cfg.seed, GRADIENT_STREAM),
                        self.cfg.estimator,
                    )?
                };
                mi_gradient(k, self.noise, &e)
            }
            Objective::Renyi2 => renyi2_gradient_gmm(self.source, k, self.noise),
        }
    }

    fn ascend(&self, init: SensingKernel, restart: usize) -> Result<DesignResult> {
        let mut kernel = init;
        let mut f = self.value(&kernel)?;
        let mut history = vec![f];
        let mut step = self.cfg.step_size;
        let mut converged = false;
        let mut iterations = 0;
        if step == 0.0 {
            return Ok(DesignResult { kernel, objective: f, converged, iterations, history, restart });
        }
        while iterations < self.cfg.max_iters {
            let g = self.gradient(&kernel)?;
            let m = kernel.matrix();
            let tangent = &g - m * (frob_dot(&g, m) / m.norm_squared());
            if tangent.norm() <= self.cfg.tol {
                converged = true;
                break;
            }
            iterations += 1;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let candidate = match SensingKernel::new(m + &g * step).and_then(|k| k.normalize_power(1.0)) {
                    Ok(k) => k,
                    Err(Error::DegenerateKernel(_)) => {
                        step *= 0.5;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let fc = self.value(&candidate)?;
                let predicted = frob_dot(&g, &(candidate.matrix() - m));
                if fc >= f && fc >= f + ARMIJO_C * predicted {
                    kernel = candidate;
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
        Ok(DesignResult { kernel, objective: f, converged, iterations, history, restart })
    }
}

fn initial_kernel(source: &GmmModel, noise: &NoiseModel, rows: usize, cfg: &DesignConfig, restart: usize) -> Result<SensingKernel> {
    if restart == 0 && cfg.waterfill_init {
        let cov = CovarianceSpectrum::new(source.covariance(), SpectrumOrder::Descending)?;
        if let Ok(k) = design_gaussian_waterfilling(&cov, noise, rows) {
            return Ok(k);
        }
    }
    random_kernel(rows, source.dim(), derive_seed(cfg.seed, restart as u64))
}

fn run_design(source: &GmmModel, noise: &NoiseModel, rows: usize, cfg: &DesignConfig, objective: Objective) -> Result<DesignResult> {
    cfg.validate()?;
    if rows == 0 || rows > source.dim() {
        return Err(Error::Shape(format!("need 1 <= rows <= {}, got {rows}", source.dim())));
    }
    if noise.dim() != rows {
        return Err(Error::Shape(format!("noise has dimension {}, expected {rows}", noise.dim())));
    }
    let problem = Problem { source, noise, objective, cfg };
    let results = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| problem.ascend(initial_kernel(source, noise, rows, cfg, r)?, r))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.objective > results[best].objective {
            best = i;
        }
    }
    Ok(results.into_iter().nth(best).expect("at least one restart"))
}

/// Best-of-restarts projected gradient ascent on `I(x; y)` using the
/// I-MMSE gradient `Σ_w⁻¹ M E`.
pub fn design_gradient_ascent_mi(source: &GmmModel, noise: &NoiseModel, rows: usize, cfg: &DesignConfig) -> Result<DesignResult> {
    run_design(source, noise, rows, cfg, Objective::MutualInformation)
}

/// Best-of-restarts projected gradient ascent on the quadratic Rényi
/// entropy `h₂(y)` using its analytic gradient.
pub fn design_gradient_ascent_renyi2(source: &GmmModel, noise: &NoiseModel, rows: usize, cfg: &DesignConfig) -> Result<DesignResult> {
    run_design(source, noise, rows, cfg, Objective::Renyi2)
}

/// Stationarity diagnostics for a kernel against the structure of an
/// optimal design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Relative off-diagonal mass of `U_MᵀΣ_wU_M` between distinct singular
    /// values of `M`: zero iff the left singular vectors expose the noise
    /// modes, up to permutation, sign and rotations within ties.
    pub left_alignment_residual: f64,
    /// Relative off-diagonal mass of `V_aᵀ E V_a` over the active right
    /// singular vectors, between distinct singular values.
    pub diagonalization_residual: f64,
    /// `max_i |η λ_{w_i} − mmse_i| / max_i mmse_i` over active modes.
    pub mercury_residual: f64,
    /// Least-squares water level over active modes.
    pub water_level: f64,
    pub active_modes: usize,
    /// Best matching of left singular vectors to noise eigenvectors:
    /// `permutation[i]` is the noise mode paired with kernel mode `i`.
    pub permutation: Vec<usize>,
}

/// Group consecutive indices of a nonincreasing sequence whose values agree
/// within [`TIE_TOL`] of the largest.
fn tie_groups(values: &DVector<f64>) -> Vec<usize> {
    let scale = values.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut group = Vec::with_capacity(values.len());
    let mut g = 0;
    for i in 0..values.len() {
        if i > 0 && (values[i - 1] - values[i]).abs() > TIE_TOL.max(1e-8) * scale {
            g += 1;
        }
        group.push(g);
    }
    group
}

fn off_group_norm(a: &DMatrix<f64>, groups: &[usize]) -> f64 {
    let mut s = 0.0;
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            if groups[r] != groups[c] {
                s += a[(r, c)] * a[(r, c)];
            }
        }
    }
    s.sqrt()
}

/// Permutation maximizing `Σ_i |Q[i, π(i)]|`: exhaustive for up to six
/// modes, greedy above.
fn best_permutation(q: &DMatrix<f64>) -> Vec<usize> {
    let n = q.nrows();
    if n <= 6 {
        let mut best = (f64::NEG_INFINITY, (0..n).collect::<Vec<_>>());
        let mut perm: Vec<usize> = (0..n).collect();
        permute(&mut perm, 0, &mut |p| {
            let s: f64 = p.iter().enumerate().map(|(i, &j)| q[(i, j)].abs()).sum();
            if s > best.0 + 1e-15 {
                best = (s, p.to_vec());
            }
        });
        return best.1;
    }
    let mut taken = vec![false; n];
    let mut perm = vec![0; n];
    let mut entries: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    entries.sort_by(|a, b| q[(b.0, b.1)].abs().total_cmp(&q[(a.0, a.1)].abs()));
    let mut assigned = vec![false; n];
    for (i, j) in entries {
        if !assigned[i] && !taken[j] {
            perm[i] = j;
            assigned[i] = true;
            taken[j] = true;
        }
    }
    perm
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

/// KKT diagnostics using the conditional-covariance MMSE estimator.
pub fn kkt_check(kernel: &SensingKernel, source: &GmmModel, noise: &NoiseModel, mc_samples: usize, seed: u64) -> Result<KktReport> {
    kkt_check_with(kernel, source, noise, mc_samples, seed, MmseEstimator::Conditional)
}

pub fn kkt_check_with(
    kernel: &SensingKernel,
    source: &GmmModel,
    noise: &NoiseModel,
    mc_samples: usize,
    seed: u64,
    estimator: MmseEstimator,
) -> Result<KktReport> {
    let e = mmse_matrix_mc_with(source, kernel, noise, mc_samples, seed, estimator)?;
    let s = kernel.singular_values();
    let smax = s.iter().copied().fold(0.0, f64::max);
    let groups = tie_groups(s);
    let u = kernel.u();
    let sw = noise.matrix();

    let rotated = u.transpose() * sw * u;
    let left_alignment_residual = off_group_norm(&rotated, &groups) / sw.norm();
    let permutation = best_permutation(&(u.transpose() * noise.spectrum().eigenvectors()));

    let active: Vec<usize> = (0..s.len()).filter(|&i| s[i] > 1e-8 * smax && smax > 0.0).collect();
    let va = DMatrix::from_fn(kernel.cols(), active.len(), |r, c| kernel.v()[(r, active[c])]);
    let ev = va.transpose() * e.matrix() * &va;
    let active_groups: Vec<usize> = active.iter().map(|&i| groups[i]).collect();
    let diagonalization_residual = if active.is_empty() { 0.0 } else { off_group_norm(&ev, &active_groups) / ev.norm() };

    // Per active mode: noise power seen by the mode and its MMSE in the
    // equivalent diagonal channel.
    let lw: Vec<f64> = active.iter().map(|&i| rotated[(i, i)]).collect();
    let mmse: Vec<f64> = (0..active.len()).map(|i| ev[(i, i)]).collect();
    let (water_level, mercury_residual) = if active.is_empty() {
        (0.0, 0.0)
    } else {
        let eta = lw.iter().zip(&mmse).map(|(a, b)| a * b).sum::<f64>() / lw.iter().map(|a| a * a).sum::<f64>();
        let scale = mmse.iter().copied().fold(0.0, f64::max);
        let worst = lw.iter().zip(&mmse).map(|(a, b)| (eta * a - b).abs()).fold(0.0, f64::max);
        (eta, if scale > 0.0 { worst / scale } else { 0.0 })
    };
    Ok(KktReport {
        left_alignment_residual,
        diagonalization_residual,
        mercury_residual,
        water_level,
        active_modes: active.len(),
        permutation,
    })
}

/// One row of the alignment comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub snr_db: f64,
    pub mi_aligned_nats: f64,
    pub mi_identity_nats: f64,
}

/// Mutual information of a two-mode diagonal channel with the source modes
/// paired to noise modes by `pairing`, under Theorem-1 power allocation for
/// that fixed pairing.
fn fixed_pairing_mi(lx: &[f64], lw: &[f64], pairing: &[usize]) -> Result<f64> {
    let ratios: Vec<f64> = (0..lx.len()).map(|i| lw[pairing[i]] / lx[i]).collect();
    let (lambda, _) = waterfill_allocation(&ratios, lx.len() as f64)?;
    Ok((0..lx.len()).map(|i| 0.5 * (lambda[i] / ratios[i]).ln_1p()).sum())
}

/// Mutual information versus SNR for two fixed alignments of a diagonal
/// source `Λ_x` and noise `σ²Λ_w`, with `SNR = 1/σ²`. "Aligned" pairs the
/// strongest source mode with the weakest noise mode (`U_M = J`); "identity"
/// pairs them in their given order (`U_M = I`). Both use waterfilling power
/// allocation for their pairing and `V_M = I`.
pub fn compare_alignments(lx: [f64; 2], lw: [f64; 2], snr_grid_db: &[f64]) -> Result<Vec<AlignmentRow>> {
    if lx.iter().chain(lw.iter()).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("eigenvalues must be positive".into()));
    }
    // Order both by the source strength, then find which noise index is weakest.
    let (sx, order) = if lx[0] >= lx[1] { ([lx[0], lx[1]], [0, 1]) } else { ([lx[1], lx[0]], [1, 0]) };
    let noise_in_order = [lw[order[0]], lw[order[1]]];
    let weakest_first = if noise_in_order[0] <= noise_in_order[1] { [0, 1] } else { [1, 0] };
    snr_grid_db
        .iter()
        .map(|&snr_db| {
            let var = 10f64.powf(-snr_db / 10.0);
            let w = [noise_in_order[0] * var, noise_in_order[1] * var];
            Ok(AlignmentRow {
                snr_db,
                mi_aligned_nats: fixed_pairing_mi(&sx, &w, &weakest_first)?,
                mi_identity_nats: fixed_pairing_mi(&sx, &w, &[0, 1])?,
            })
        })
        .collect()
}

pub fn alignment_csv(rows: &[AlignmentRow]) -> String {
    let mut out = String::from("snr_db,mi_aligned_nats,mi_identity_nats\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.snr_db, r.mi_aligned_nats, r.mi_identity_nats).expect("writing to a String");
    }
    out
}

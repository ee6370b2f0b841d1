//! Sensing, reconstruction and PSNR, and the per-patch imaging experiment.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{
    design_gaussian_waterfilling, design_gradient_ascent_mi, design_gradient_ascent_renyi2, random_kernel, DesignConfig,
};
use crate::error::{Error, Result};
use crate::linalg::SpectrumOrder;
use crate::models::{CovarianceSpectrum, GmmModel, NoiseModel, SensingKernel};
use crate::online::{run_online_acquisition_with, OnlineConfig, Strategy};
use crate::pipeline::image::extract_patches;
use crate::posterior::update_posterior;
use crate::seed::derive_seed;

/// PSNR reported for identical images.
pub const PSNR_SENTINEL_DB: f64 = 99.0;

const RANDOM_KERNEL_STREAM: u64 = 0x5241_4E44;
const DESIGN_STREAM: u64 = 0x4F46_464C;

/// `y = Mx + w`, `w ~ N(0, Σ_w)`, with `w` drawn from a stream seeded by `seed`.
pub fn simulate_measurements(x: &DVector<f64>, kernel: &SensingKernel, noise: &NoiseModel, seed: u64) -> Result<DVector<f64>> {
    if x.len() != kernel.cols() || noise.dim() != kernel.rows() {
        return Err(Error::Shape(format!(
            "signal length {}, kernel {}x{}, noise dimension {}",
            x.len(),
            kernel.rows(),
            kernel.cols(),
            noise.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_fn(kernel.rows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(kernel.matrix() * x + noise.spectrum().sqrt_factor() * z)
}

/// Posterior mean of `x` given `y`; the prior mean when there are no rows.
/// No clamping is applied here.
pub fn reconstruct_patch(y: &DVector<f64>, kernel: &SensingKernel, noise: &NoiseModel, prior: &GmmModel) -> Result<DVector<f64>> {
    if kernel.cols() != prior.dim() {
        return Err(Error::Shape(format!("kernel has {} columns, prior has dimension {}", kernel.cols(), prior.dim())));
    }
    if kernel.rows() == 0 {
        if !y.is_empty() {
            return Err(Error::Shape(format!("y has length {}, kernel has no rows", y.len())));
        }
        return Ok(prior.mean());
    }
    Ok(update_posterior(prior, kernel, noise, y)?.mean())
}

/// `10·log10(255² / MSE)`, or [`PSNR_SENTINEL_DB`] when the images agree.
pub fn psnr(reference: &DMatrix<f64>, reconstruction: &DMatrix<f64>) -> Result<f64> {
    if reference.shape() != reconstruction.shape() || reference.is_empty() {
        return Err(Error::Shape(format!(
            "images are {:?} and {:?}",
            reference.shape(),
            reconstruction.shape()
        )));
    }
    let mse = (reference - reconstruction).norm_squared() / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_SENTINEL_DB);
    }
    Ok((10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_SENTINEL_DB))
}

/// Clamp every pixel to `[0, 255]`.
pub fn clamp_image(image: &DMatrix<f64>) -> DMatrix<f64> {
    image.map(|v| v.clamp(0.0, 255.0))
}

/// A kernel-design method of the imaging experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// One i.i.d. Gaussian kernel for all patches. Kernels for smaller `ℓ`
    /// are the leading rows of the largest one, renormalized.
    Random,
    /// Waterfilling on the mixture covariance.
    Waterfill,
    OfflinePv,
    OfflineRenyi,
    Online(Strategy),
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Random,
        Method::Waterfill,
        Method::OfflinePv,
        Method::OfflineRenyi,
        Method::Online(Strategy::Pds),
        Method::Online(Strategy::Pv),
        Method::Online(Strategy::Renyi),
        Method::Online(Strategy::Random),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Waterfill => "waterfill",
            Method::OfflinePv => "offline-pv",
            Method::OfflineRenyi => "offline-renyi",
            Method::Online(Strategy::Pds) => "online-pds",
            Method::Online(Strategy::Pv) => "online-pv",
            Method::Online(Strategy::Renyi) => "online-renyi",
            Method::Online(Strategy::Random) => "online-random",
        }
    }

    pub fn is_online(self) -> bool {
        matches!(self, Method::Online(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Parse(format!("unknown strategy '{s}', expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub strategies: Vec<Method>,
    pub l_grid: Vec<usize>,
    pub noise_var: f64,
    pub seed: u64,
    pub patch_rows: usize,
    pub patch_cols: usize,
    /// Offline PV and Rényi design settings. `seed` is derived per `ℓ`.
    pub design: DesignConfig,
    pub online: OnlineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategies: vec![Method::Random, Method::Online(Strategy::Pds)],
            l_grid: vec![2, 4, 6, 8, 10],
            noise_var: 1e-6,
            seed: 0,
            patch_rows: 8,
            patch_cols: 8,
            design: DesignConfig::default(),
            online: OnlineConfig::default(),
        }
    }
}

/// One point of a PSNR curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub strategy: Method,
    pub measurements_per_patch: usize,
    pub psnr_db: f64,
    pub seed: u64,
    pub wall_time_s: f64,
}

/// CSV with header `strategy,l,psnr_db,seed,wall_time_s`.
pub fn records_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::from("strategy,l,psnr_db,seed,wall_time_s\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{},{}", r.strategy, r.measurements_per_patch, r.psnr_db, r.seed, r.wall_time_s);
    }
    out
}

/// Reconstructed image for one strategy and `ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub strategy: Method,
    pub measurements_per_patch: usize,
    /// Patch estimates reassembled without clamping.
    pub raw: DMatrix<f64>,
    /// `raw` clamped to `[0, 255]`; PSNR is computed on this.
    pub image: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<ExperimentRecord>,
    pub reconstructions: Vec<Reconstruction>,
}

/// For every strategy and `ℓ`: design (once for offline methods, per patch
/// for online ones), sense every patch, reconstruct, reassemble and score.
/// Patch `j` draws its noise from `derive_seed(seed, j)`, so results do not
/// depend on the number of threads.
pub fn run_experiment(image: &DMatrix<f64>, prior: &GmmModel, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let grid = extract_patches(image, cfg.patch_rows, cfg.patch_cols)?;
    let m = cfg.patch_rows * cfg.patch_cols;
    if prior.dim() != m {
        return Err(Error::Shape(format!("prior has dimension {}, patches have {m} pixels", prior.dim())));
    }
    if let Some(&l) = cfg.l_grid.iter().find(|&&l| l > m) {
        return Err(Error::Shape(format!("{l} measurements per patch exceed the patch size {m}")));
    }
    if !(cfg.noise_var > 0.0 && cfg.noise_var.is_finite()) {
        return Err(Error::InvalidInput(format!("noise variance must be positive, got {}", cfg.noise_var)));
    }
    let l_max = cfg.l_grid.iter().copied().max().unwrap_or(0);
    let random_full = if l_max > 0 { Some(random_kernel(l_max, m, derive_seed(cfg.seed, RANDOM_KERNEL_STREAM))?) } else { None };
    let patch_seeds: Vec<u64> = (0..grid.len() as u64).map(|j| derive_seed(cfg.seed, j)).collect();

    let mut records = Vec::new();
    let mut reconstructions = Vec::new();
    for &method in &cfg.strategies {
        for &l in &cfg.l_grid {
            let start = Instant::now();
            let estimates: Vec<DVector<f64>> = match method {
                Method::Online(strategy) => grid
                    .patches()
                    .par_iter()
                    .zip(&patch_seeds)
                    .map(|(x, &s)| {
                        if l == 0 {
                            return Ok(prior.mean());
                        }
                        let t = run_online_acquisition_with(x, prior, cfg.noise_var, strategy, l, s, &cfg.online)?;
                        Ok(t.final_estimate().cloned().expect("nonempty trace"))
                    })
                    .collect::<Result<_>>()?,
                _ => {
                    let kernel = offline_kernel(method, prior, l, cfg, random_full.as_ref())?;
                    let noise = NoiseModel::isotropic(l, cfg.noise_var)?;
                    grid.patches()
                        .par_iter()
                        .zip(&patch_seeds)
                        .map(|(x, &s)| {
                            let y = simulate_measurements(x, &kernel, &noise, s)?;
                            reconstruct_patch(&y, &kernel, &noise, prior)
                        })
                        .collect::<Result<_>>()?
                }
            };
            let raw = grid.reassemble(&estimates)?;
            let clamped = clamp_image(&raw);
            let psnr_db = psnr(image, &clamped)?;
            records.push(ExperimentRecord {
                strategy: method,
                measurements_per_patch: l,
                psnr_db,
                seed: cfg.seed,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
            reconstructions.push(Reconstruction { strategy: method, measurements_per_patch: l, raw, image: clamped });
        }
    }
    Ok(ExperimentOutput { records, reconstructions })
}

fn offline_kernel(
    method: Method,
    prior: &GmmModel,
    l: usize,
    cfg: &ExperimentConfig,
    random_full: Option<&SensingKernel>,
) -> Result<SensingKernel> {
    let m = prior.dim();
    if l == 0 {
        return SensingKernel::new(DMatrix::zeros(0, m));
    }
    let noise = NoiseModel::isotropic(l, cfg.noise_var)?;
    let design = DesignConfig { seed: derive_seed(cfg.seed, DESIGN_STREAM ^ l as u64), ..cfg.design.clone() };
    match method {
        Method::Random => random_full.expect("random kernel drawn for l > 0").top_rows(l)?.normalize_power(1.0),
        Method::Waterfill => {
            let cov = CovarianceSpectrum::new(prior.covariance(), SpectrumOrder::Descending)?;
            design_gaussian_waterfilling(&cov, &noise, l)
        }
        Method::OfflinePv => Ok(design_gradient_ascent_mi(prior, &noise, l, &design)?.kernel),
        Method::OfflineRenyi => Ok(design_gradient_ascent_renyi2(prior, &noise, l, &design)?.kernel),
        Method::Online(_) => unreachable!("online methods design per patch"),
    }
}

#![allow(dead_code)]

use csdesign::models::{CovarianceSpectrum, GaussianComponent, GmmModel, NoiseModel, SensingKernel, SpectrumOrder};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `AAᵀ/dim + floor·I`.
pub fn random_spd(dim: usize, floor: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = random_matrix(dim, dim, rng);
    &a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim) * floor
}

pub fn spectrum(m: DMatrix<f64>) -> CovarianceSpectrum {
    CovarianceSpectrum::new(m, SpectrumOrder::Descending).unwrap()
}

pub fn kernel(m: DMatrix<f64>) -> SensingKernel {
    SensingKernel::new(m).unwrap()
}

pub fn gaussian_kernel(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> SensingKernel {
    kernel(random_matrix(rows, cols, rng)).normalize_power(1.0).unwrap()
}

pub fn random_noise(dim: usize, rng: &mut ChaCha8Rng) -> NoiseModel {
    NoiseModel::new(random_spd(dim, 0.2, rng) * 0.5).unwrap()
}

pub fn random_gmm(k: usize, dim: usize, spread: f64, rng: &mut ChaCha8Rng) -> GmmModel {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let mut acc = 0.0;
    let comps = (0..k)
        .map(|i| {
            let w = if i + 1 == k { 1.0 - acc } else { raw[i] / total };
            acc += w;
            let mean = DVector::from_fn(dim, |_, _| spread * rng.sample::<f64, _>(StandardNormal));
            GaussianComponent::new(w, mean, random_spd(dim, 0.1, rng)).unwrap()
        })
        .collect();
    GmmModel::new(comps).unwrap()
}

/// Central differences of `f` at `m`, entry by entry.
pub fn finite_difference(m: &DMatrix<f64>, h: f64, mut f: impl FnMut(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let mut p = m.clone();
            p[(r, c)] += h;
            let mut q = m.clone();
            q[(r, c)] -= h;
            g[(r, c)] = (f(&p) - f(&q)) / (2.0 * h);
        }
    }
    g
}

/// `max |a − b| / max |b|`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

/// Composite Simpson rule on `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

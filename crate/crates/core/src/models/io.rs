//! Structured-text (JSON) file formats for mixtures and kernels.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so parse/serialize round trips are exact.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{GaussianComponent, GmmModel, SensingKernel};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComponentRecord {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GmmRecord {
    pub dim: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub components: Vec<ComponentRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KernelRecord {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Parse(format!("covariance must be {dim}x{dim}")));
    }
    Ok(DMatrix::from_fn(dim, dim, |r, c| rows[r][c]))
}

impl From<&GmmModel> for GmmRecord {
    fn from(model: &GmmModel) -> Self {
        GmmRecord {
            dim: model.dim(),
            k: model.len(),
            components: model
                .components()
                .iter()
                .map(|c| ComponentRecord {
                    weight: c.weight,
                    mean: c.mean.iter().copied().collect(),
                    covariance: matrix_to_rows(c.covariance.matrix()),
                })
                .collect(),
        }
    }
}

impl TryFrom<&GmmRecord> for GmmModel {
    type Error = Error;

    fn try_from(rec: &GmmRecord) -> Result<Self> {
        if rec.components.len() != rec.k {
            return Err(Error::Parse(format!("K = {} but {} components listed", rec.k, rec.components.len())));
        }
        let components = rec
            .components
            .iter()
            .map(|c| {
                if c.mean.len() != rec.dim {
                    return Err(Error::Parse(format!("mean must have length {}", rec.dim)));
                }
                GaussianComponent::new(
                    c.weight,
                    DVector::from_column_slice(&c.mean),
                    rows_to_matrix(&c.covariance, rec.dim)?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        GmmModel::new(components)
    }
}

impl From<&SensingKernel> for KernelRecord {
    fn from(k: &SensingKernel) -> Self {
        KernelRecord {
            rows: k.rows(),
            cols: k.cols(),
            data: k.matrix().transpose().iter().copied().collect(),
        }
    }
}

impl TryFrom<&KernelRecord> for SensingKernel {
    type Error = Error;

    fn try_from(rec: &KernelRecord) -> Result<Self> {
        SensingKernel::from_rows(rec.rows, rec.cols, &rec.data)
    }
}

pub fn gmm_to_string(model: &GmmModel) -> String {
    serde_json::to_string_pretty(&GmmRecord::from(model)).expect("finite floats serialize")
}

pub fn gmm_from_str(s: &str) -> Result<GmmModel> {
    let rec: GmmRecord = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
    GmmModel::try_from(&rec)
}

pub fn kernel_to_string(kernel: &SensingKernel) -> String {
    serde_json::to_string_pretty(&KernelRecord::from(kernel)).expect("finite floats serialize")
}

pub fn kernel_from_str(s: &str) -> Result<SensingKernel> {
    let rec: KernelRecord = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
    SensingKernel::try_from(&rec)
}

pub fn write_gmm(path: impl AsRef<Path>, model: &GmmModel) -> Result<()> {
    fs::write(path, gmm_to_string(model) + "\n")?;
    Ok(())
}

pub fn read_gmm(path: impl AsRef<Path>) -> Result<GmmModel> {
    gmm_from_str(&fs::read_to_string(path)?)
}

pub fn write_kernel(path: impl AsRef<Path>, kernel: &SensingKernel) -> Result<()> {
    fs::write(path, kernel_to_string(kernel) + "\n")?;
    Ok(())
}

pub fn read_kernel(path: impl AsRef<Path>) -> Result<SensingKernel> {
    kernel_from_str(&fs::read_to_string(path)?)
}

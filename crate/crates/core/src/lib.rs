//! Design of compressive-sensing projection kernels by maximizing mutual
//! information or quadratic Rényi entropy, with closed-form reconstruction
//! under Gaussian-mixture priors.

pub mod design;
pub mod error;
pub mod info;
pub mod linalg;
pub mod models;
pub mod online;
pub mod pipeline;
pub mod posterior;
pub mod seed;

pub use error::{Error, Result};

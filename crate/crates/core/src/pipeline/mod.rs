//! The patch-based imaging experiment: PGM images, patch tilings, EM
//! training of the prior, sensing, reconstruction and PSNR curves.

pub mod em;
pub mod experiment;
pub mod image;

pub use em::{train_gmm_em, train_gmm_em_with, EmConfig, EmFit};
pub use experiment::{
    clamp_image, psnr, reconstruct_patch, records_csv, run_experiment, simulate_measurements, ExperimentConfig,
    ExperimentOutput, ExperimentRecord, Method, Reconstruction, PSNR_SENTINEL_DB,
};
pub use image::{
    encode_pgm, extract_patches, parse_pgm, read_pgm, read_pgm_dir, sample_training_patches, write_pgm, PatchGrid,
};

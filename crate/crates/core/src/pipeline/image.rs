//! 8-bit binary PGM images and non-overlapping patch tilings.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Parse a binary (`P5`) PGM with `maxval ≤ 255`. Pixel values are scaled
/// to `[0, 255]` and returned as a `height×width` matrix.
pub fn parse_pgm(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Parse("not a binary PGM (expected P5)".into()));
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| Error::Parse(format!("bad PGM {what} '{t}'")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("only 8-bit PGM is supported, maxval is {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let data = bytes.get(pos + 1..).unwrap_or(&[]);
    if data.len() < width * height {
        return Err(Error::Parse(format!("PGM raster has {} bytes, expected {}", data.len(), width * height)));
    }
    let scale = 255.0 / maxval as f64;
    Ok(DMatrix::from_fn(height, width, |r, c| data[r * width + c] as f64 * scale))
}

/// Encode as `P5` with maxval 255, rounding and clamping each pixel.
pub fn encode_pgm(image: &DMatrix<f64>) -> Vec<u8> {
    let (h, w) = image.shape();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h);
    for r in 0..h {
        for c in 0..w {
            out.push(image[(r, c)].round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    parse_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &DMatrix<f64>) -> Result<()> {
    Ok(fs::write(path, encode_pgm(image))?)
}

/// Every `*.pgm` file in `dir`, in file-name order.
pub fn read_pgm_dir(dir: impl AsRef<Path>) -> Result<Vec<DMatrix<f64>>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    paths.iter().map(read_pgm).collect()
}

/// Non-overlapping tiling of an image into `patch_rows×patch_cols` blocks.
/// Patches are listed in raster order (left to right, then top to bottom);
/// each patch is vectorized column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    image_rows: usize,
    image_cols: usize,
    patch_rows: usize,
    patch_cols: usize,
    patches: Vec<DVector<f64>>,
}

impl PatchGrid {
    pub fn patches(&self) -> &[DVector<f64>] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_shape(&self) -> (usize, usize) {
        (self.patch_rows, self.patch_cols)
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.image_rows, self.image_cols)
    }

    /// Patch vectors stacked as the rows of a `J×m` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let m = self.patch_rows * self.patch_cols;
        DMatrix::from_fn(self.patches.len(), m, |j, i| self.patches[j][i])
    }

    /// Rebuild the image from the stored patches.
    pub fn image(&self) -> DMatrix<f64> {
        self.reassemble(&self.patches).expect("stored patches match the grid")
    }

    /// Place `patches` (same order and shape as the grid's) back into an image.
    pub fn reassemble(&self, patches: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let m = self.patch_rows * self.patch_cols;
        if patches.len() != self.patches.len() || patches.iter().any(|p| p.len() != m) {
            return Err(Error::Shape(format!("expected {} patches of length {m}", self.patches.len())));
        }
        let per_row = self.image_cols / self.patch_cols;
        let mut image = DMatrix::zeros(self.image_rows, self.image_cols);
        for (j, p) in patches.iter().enumerate() {
            let (r0, c0) = ((j / per_row) * self.patch_rows, (j % per_row) * self.patch_cols);
            image
                .view_mut((r0, c0), (self.patch_rows, self.patch_cols))
                .copy_from_slice(p.as_slice());
        }
        Ok(image)
    }
}

pub fn extract_patches(image: &DMatrix<f64>, patch_rows: usize, patch_cols: usize) -> Result<PatchGrid> {
    let (h, w) = image.shape();
    if patch_rows == 0 || patch_cols == 0 || h % patch_rows != 0 || w % patch_cols != 0 {
        return Err(Error::Shape(format!("{h}x{w} image is not divisible into {patch_rows}x{patch_cols} patches")));
    }
    let mut patches = Vec::with_capacity((h / patch_rows) * (w / patch_cols));
    for r0 in (0..h).step_by(patch_rows) {
        for c0 in (0..w).step_by(patch_cols) {
            patches.push(DVector::from_iterator(
                patch_rows * patch_cols,
                image.view((r0, c0), (patch_rows, patch_cols)).iter().copied(),
            ));
        }
    }
    Ok(PatchGrid { image_rows: h, image_cols: w, patch_rows, patch_cols, patches })
}

/// `count` training patches at uniformly random positions (overlap allowed)
/// in uniformly chosen images, as the rows of a `count×m` matrix.
pub fn sample_training_patches(
    images: &[DMatrix<f64>],
    patch_rows: usize,
    patch_cols: usize,
    count: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let usable: Vec<&DMatrix<f64>> =
        images.iter().filter(|im| im.nrows() >= patch_rows && im.ncols() >= patch_cols).collect();
    if usable.is_empty() || patch_rows == 0 || patch_cols == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = patch_rows * patch_cols;
    let mut out = DMatrix::zeros(count, m);
    for j in 0..count {
        let im = usable[rng.random_range(0..usable.len())];
        let r0 = rng.random_range(0..=im.nrows() - patch_rows);
        let c0 = rng.random_range(0..=im.ncols() - patch_cols);
        for (i, v) in im.view((r0, c0), (patch_rows, patch_cols)).iter().enumerate() {
            out[(j, i)] = *v;
        }
    }
    Ok(out)
}

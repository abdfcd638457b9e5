//! Gram-matrix style loss over caller-supplied features, and mask IoU.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{load_tensor, matmul, transpose, Grid, Matrix};

/// `G = Fᵀ·F / (n·d)` for an `n x d` feature matrix.
pub fn gram_matrix<T: Scalar>(f: &Matrix<T>) -> Matrix<T> {
    let (n, d) = f.shape();
    let g = matmul(&transpose(f), f, false).expect("FᵀF shapes always agree");
    let norm = (n * d) as f64;
    if norm == 0.0 {
        return g;
    }
    let data = g
        .as_slice()
        .iter()
        .map(|&v| T::from_acc(v.acc() / norm))
        .collect();
    Matrix::from_parts(d, d, data)
}

/// Mean over layers of the mean squared difference between Gram matrices.
pub fn gram_loss<T: Scalar>(features_a: &[Matrix<T>], features_b: &[Matrix<T>]) -> Result<f64> {
    if features_a.len() != features_b.len() {
        return Err(Error::shape(format!(
            "{} layers vs {} layers",
            features_a.len(),
            features_b.len()
        )));
    }
    if features_a.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut total = 0.0;
    for (layer, (a, b)) in features_a.iter().zip(features_b).enumerate() {
        if a.cols() != b.cols() {
            return Err(Error::shape(format!(
                "layer {layer}: {} channels vs {}",
                a.cols(),
                b.cols()
            )));
        }
        let (ga, gb) = (gram_matrix(a), gram_matrix(b));
        let entries = ga.as_slice().len();
        if entries == 0 {
            continue;
        }
        let sq: f64 = ga
            .as_slice()
            .iter()
            .zip(gb.as_slice())
            .map(|(x, y)| (x.acc() - y.acc()).powi(2))
            .sum();
        total += sq / entries as f64;
    }
    Ok(total / features_a.len() as f64)
}

/// Strictly binary `H x W` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    grid: Grid,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(grid: Grid, data: Vec<bool>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::shape(format!(
                "{} mask values on a {}x{} grid",
                data.len(),
                grid.height,
                grid.width
            )));
        }
        Ok(Self { grid, data })
    }

    /// Interprets a 2-D matrix `(H, W)` whose entries are exactly 0 or 1.
    pub fn from_matrix<T: Scalar>(m: &Matrix<T>) -> Result<Self> {
        let data = m
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v.is_zero() {
                    Ok(false)
                } else if v == T::one() {
                    Ok(true)
                } else {
                    Err(Error::NotBinary(i))
                }
            })
            .collect::<Result<_>>()?;
        Self::new(Grid::new(m.rows(), m.cols()), data)
    }

    /// 8-bit grayscale image bytes (any format the `image` crate reads);
    /// pixels `>= 128` are set.
    pub fn from_image_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| Error::Parse(format!("mask image: {e}")))?
            .to_luma8();
        let grid = Grid::new(img.height() as usize, img.width() as usize);
        Self::new(grid, img.as_raw().iter().map(|&p| p >= 128).collect())
    }

    /// Loads a `QALN` tensor mask, or a PGM/PNG image mask by extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm" | "pnm" | "png") => {
                let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                Self::from_image_bytes(&bytes)
            }
            _ => {
                let m = load_tensor(path)?;
                if m.grid().is_some() {
                    return Err(Error::BadDimensions(
                        "mask tensors must be 2-D (H, W)".into(),
                    ));
                }
                Self::from_matrix(&m)
            }
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// `|A ∩ B| / |A ∪ B|`.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch(
            (a.grid.height, a.grid.width),
            (b.grid.height, b.grid.width),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Err(Error::EmptyUnion);
    }
    Ok(inter as f64 / union as f64)
}

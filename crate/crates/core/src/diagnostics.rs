//! Patch attention maps, thresholded difference maps, leakage mass and
//! grayscale heatmaps.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul, row_softmax, Grid, Matrix};

/// Default masking threshold for difference maps.
pub const DEFAULT_DIFF_THRESHOLD: f64 = 0.2;

/// Which appearance features the structure queries are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMode {
    /// `softmax(Q_str · K_appᵀ)`
    QueryKey,
    /// `softmax(Q_str · Q_appᵀ)`
    QueryQuery,
}

/// A set of appearance positions (flattened indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSelection {
    indices: Vec<usize>,
}

impl PatchSelection {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    /// The `h x w` rectangle with top-left corner `(row, col)` on `grid`,
    /// in row-major order.
    pub fn from_rect(grid: Grid, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || row + h > grid.height || col + w > grid.width {
            return Err(Error::IndexOutOfRange {
                index: (row + h).max(col + w),
                len: grid.height.max(grid.width),
            });
        }
        let indices = (row..row + h)
            .flat_map(|r| (col..col + w).map(move |c| r * grid.width + c))
            .collect();
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::EmptySelection("patch"));
        }
        match self.indices.iter().find(|&&i| i >= n) {
            Some(&index) => Err(Error::IndexOutOfRange { index, len: n }),
            None => Ok(()),
        }
    }
}

/// Attention received by one appearance position, over structure positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMap<T> {
    pub index: usize,
    pub values: Vec<T>,
    pub grid: Option<Grid>,
}

/// Column `j` of `softmax(Q_str·Rᵀ/√d)` for each selected appearance index `j`,
/// where `R` is `K_app` or `Q_app` depending on `mode`. The columns are not
/// renormalized.
pub fn patch_attention_map<T: Scalar>(
    q_str: &Matrix<T>,
    q_app: &Matrix<T>,
    k_app: &Matrix<T>,
    mode: AlignMode,
    patch: &PatchSelection,
    contrast: f64,
) -> Result<Vec<PatchMap<T>>> {
    let right = match mode {
        AlignMode::QueryKey => k_app,
        AlignMode::QueryQuery => q_app,
    };
    if right.cols() != q_str.cols() {
        return Err(Error::shape(format!(
            "structure queries have {} channels, appearance side {}",
            q_str.cols(),
            right.cols()
        )));
    }
    patch.validate(right.rows())?;
    let logits = matmul(q_str, right, true)?;
    let scale = 1.0 / (q_str.cols() as f64).sqrt();
    let map = crate::attention::apply_contrast(&row_softmax(&logits, scale), contrast)?;
    Ok(patch
        .indices()
        .iter()
        .map(|&j| PatchMap {
            index: j,
            values: (0..map.rows()).map(|r| map.get(r, j)).collect(),
            grid: q_str.grid(),
        })
        .collect())
}

/// Entrywise mean of several same-length maps.
pub fn mean_map<T: Scalar>(maps: &[PatchMap<T>]) -> Result<Vec<T>> {
    let first = maps.first().ok_or(Error::EmptySelection("patch maps"))?;
    let n = first.values.len();
    if maps.iter().any(|m| m.values.len() != n) {
        return Err(Error::shape("patch maps differ in length"));
    }
    Ok((0..n)
        .map(|i| {
            let s: f64 = maps.iter().map(|m| m.values[i].acc()).sum();
            T::from_acc(s / maps.len() as f64)
        })
        .collect())
}

/// `|a − b|` with entries below the threshold set to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffMap<T> {
    pub data: Vec<T>,
    pub grid: Option<Grid>,
    pub threshold: f64,
}

impl<T: Scalar> DiffMap<T> {
    pub fn nonzero(&self) -> usize {
        self.data.iter().filter(|v| !v.is_zero()).count()
    }
}

pub fn attention_diff_map<T: Scalar>(a: &[T], b: &[T], threshold: f64) -> Result<DiffMap<T>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "maps have {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    if !(threshold >= 0.0) || !threshold.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "threshold must be finite and >= 0, got {threshold}"
        )));
    }
    let data = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).abs();
            if d.acc() < threshold {
                T::zero()
            } else {
                d
            }
        })
        .collect();
    Ok(DiffMap {
        data,
        grid: None,
        threshold,
    })
}

/// Mean, over `query_rows`, of the attention mass outside `in_region`.
pub fn leakage_mass<T: Scalar>(
    map: &Matrix<T>,
    query_rows: &[usize],
    in_region: &[usize],
) -> Result<f64> {
    if query_rows.is_empty() {
        return Err(Error::EmptySelection("query rows"));
    }
    if in_region.is_empty() {
        return Err(Error::EmptySelection("in-region"));
    }
    let mut inside = vec![false; map.cols()];
    for &c in in_region {
        *inside.get_mut(c).ok_or(Error::IndexOutOfRange {
            index: c,
            len: map.cols(),
        })? = true;
    }
    let mut total = 0.0;
    for &r in query_rows {
        if r >= map.rows() {
            return Err(Error::IndexOutOfRange {
                index: r,
                len: map.rows(),
            });
        }
        total += map
            .row(r)
            .iter()
            .zip(&inside)
            .filter(|(_, &ins)| !ins)
            .map(|(v, _)| v.acc())
            .sum::<f64>();
    }
    Ok(total / query_rows.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Pgm,
    Png,
}

impl HeatmapFormat {
    /// Picks the format from a file extension, defaulting to PGM.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("png") => HeatmapFormat::Png,
            _ => HeatmapFormat::Pgm,
        }
    }
}

/// Min-max scales `values` to 0..=255. A constant field maps to all zeros.
pub fn heatmap_pixels<T: Scalar>(values: &[T]) -> Vec<u8> {
    let (lo, hi) = values.iter().fold((f64::MAX, f64::MIN), |(lo, hi), v| {
        (lo.min(v.acc()), hi.max(v.acc()))
    });
    let range = hi - lo;
    values
        .iter()
        .map(|v| {
            if range > 0.0 {
                (255.0 * (v.acc() - lo) / range).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

/// Binary PGM (`P5`) image bytes: header `P5\n<w> <h>\n255\n` then one byte per pixel.
pub fn pgm_bytes<T: Scalar>(values: &[T], grid: Grid) -> Result<Vec<u8>> {
    if grid.len() != values.len() {
        return Err(Error::shape(format!(
            "{} values on a {}x{} grid",
            values.len(),
            grid.height,
            grid.width
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    out.extend(heatmap_pixels(values));
    Ok(out)
}

pub fn write_heatmap<T: Scalar>(
    values: &[T],
    grid: Option<Grid>,
    path: impl AsRef<Path>,
    format: HeatmapFormat,
) -> Result<()> {
    let path = path.as_ref();
    let grid = grid.ok_or(Error::NoGrid)?;
    let bytes = match format {
        HeatmapFormat::Pgm => pgm_bytes(values, grid)?,
        HeatmapFormat::Png => {
            pgm_bytes(values, grid)?;
            let img = image::GrayImage::from_raw(
                grid.width as u32,
                grid.height as u32,
                heatmap_pixels(values),
            )
            .expect("pixel count checked");
            let mut buf = std::io::Cursor::new(Vec::new());
            img.write_to(&mut buf, image::ImageFormat::Png)
                .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
            buf.into_inner()
        }
    };
    crate::tensor::io::write_atomic(path, &bytes)
}

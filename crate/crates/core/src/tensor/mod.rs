//! Dense row-major matrices and the numeric primitives built on them.

pub(crate) mod io;
pub(crate) mod ops;

pub use io::{load_csv, load_tensor, load_tensor_bytes, save_tensor, tensor_bytes};
pub use ops::{matmul, row_softmax, row_topk, transpose};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Spatial layout of the rows of a matrix: `height * width == rows`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An `rows x cols` matrix of finite values, stored row-major.
///
/// Used for queries, keys, values, latent features, similarity matrices and
/// attention maps alike. The optional grid records how rows map onto an
/// image lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    grid: Option<Grid>,
}

impl<T: Scalar> Matrix<T> {
    /// Builds a matrix, rejecting wrong lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(Self {
            rows,
            cols,
            data,
            grid: None,
        })
    }

    /// Builds a matrix from nested rows. Panics on ragged or non-finite input;
    /// intended for literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), d, "ragged rows");
            data.extend(r.iter().map(|&v| T::from_acc(v)));
        }
        Self::from_vec(n, d, data).expect("literal matrix must be finite")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
            grid: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Attaches a spatial grid; `grid.len()` must equal `rows`.
    pub fn with_grid(mut self, grid: Grid) -> Result<Self> {
        if grid.len() != self.rows {
            return Err(Error::shape(format!(
                "grid {}x{} does not cover {} rows",
                grid.height, grid.width, self.rows
            )));
        }
        self.grid = Some(grid);
        Ok(self)
    }

    pub fn without_grid(mut self) -> Self {
        self.grid = None;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn grid(&self) -> Option<Grid> {
        self.grid
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        // chunks_exact on an empty slice with cols == 0 would panic
        (0..self.rows).map(move |r| self.row(r))
    }

    /// Multiplies every entry by `alpha`.
    pub fn scaled(&self, alpha: T) -> Self {
        Self {
            data: self.data.iter().map(|&v| v * alpha).collect(),
            ..self.clone()
        }
    }

    /// Reorders rows so that output row `i` is input row `order[i]`.
    pub fn select_rows(&self, order: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(order.len() * self.cols);
        for &r in order {
            if r >= self.rows {
                return Err(Error::IndexOutOfRange {
                    index: r,
                    len: self.rows,
                });
            }
            data.extend_from_slice(self.row(r));
        }
        Ok(Self {
            rows: order.len(),
            cols: self.cols,
            data,
            grid: None,
        })
    }

    /// Converts to another scalar type, keeping the grid.
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::from_acc(v.acc())).collect(),
            grid: self.grid,
        }
    }

    /// Largest absolute entrywise difference; `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.shape() != other.shape() {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a.acc() - b.acc()).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Construct without validation; callers guarantee finiteness and length.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            rows,
            cols,
            data,
            grid: None,
        }
    }
}

//! Query-query alignment and the sparse aggregation matrix.
//!
//! `S = Q_app · Q_strᵀ` scores appearance position `r` against structure
//! position `c`. Each appearance row casts `k` votes of weight `1/k` onto its
//! best structure columns; the votes are stored transposed, so row `c` of the
//! aggregation matrix lists the appearance positions that chose `c`.
//! Structure rows nobody chose keep their own appearance entry (`P[c][c] = 1`).
//! Finally each row is softmax-reweighted over its nonzero entries.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul, ops::topk_indices, Matrix};

/// Raw similarity scores, rows = appearance positions, columns = structure positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix<T>(Matrix<T>);

impl<T: Scalar> AlignmentMatrix<T> {
    pub fn from_matrix(m: Matrix<T>) -> Self {
        Self(m)
    }

    pub fn n_app(&self) -> usize {
        self.0.rows()
    }

    pub fn n_str(&self) -> usize {
        self.0.cols()
    }

    pub fn as_matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }
}

/// Which construction step an [`AggregationMatrix`] has been through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Top-k votes (`P`), possibly with fallback diagonal entries.
    Raw,
    /// Row-wise softmax reweighted (`P′`).
    Reweighted,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Reweighted => "reweighted",
        }
    }
}

/// Sparse `n x n` matrix; row = structure position, column = appearance position.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationMatrix<T> {
    n: usize,
    // per row, (appearance column, weight) pairs in ascending column order
    rows: Vec<Vec<(usize, T)>>,
    stage: Stage,
}

impl<T: Scalar> AggregationMatrix<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn row(&self, r: usize) -> &[(usize, T)] {
        &self.rows[r]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[(usize, T)]> {
        self.rows.iter().map(Vec::as_slice)
    }

    /// All `(row, col, weight)` triples in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, w)| (r, c, w)))
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.rows[r].iter().map(|&(_, w)| w.acc()).sum()
    }

    /// Nonzeros per column.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n];
        for (_, c, _) in self.entries() {
            counts[c] += 1;
        }
        counts
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut data = vec![T::zero(); self.n * self.n];
        for (r, c, w) in self.entries() {
            data[r * self.n + c] = w;
        }
        Matrix::from_parts(self.n, self.n, data)
    }

    /// Reads back a dense square matrix; zeros are treated as structural zeros.
    pub fn from_dense(m: &Matrix<T>, stage: Stage) -> Result<Self> {
        let (rows, cols) = m.shape();
        if rows != cols {
            return Err(Error::NonSquare { rows, cols });
        }
        let rows = m
            .iter_rows()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, w)| !w.is_zero())
                    .map(|(c, &w)| (c, w))
                    .collect()
            })
            .collect();
        let p = Self {
            n: cols,
            rows,
            stage,
        };
        if stage == Stage::Reweighted {
            for r in 0..p.n {
                if (p.row_sum(r) - 1.0).abs() > 1e-5 {
                    return Err(Error::WrongStage {
                        expected: Stage::Reweighted.name(),
                        found: Stage::Raw.name(),
                    });
                }
            }
        }
        Ok(p)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            rows: (0..n).map(|r| vec![(r, T::one())]).collect(),
            stage: Stage::Reweighted,
        }
    }

    pub(crate) fn expect_stage(&self, expected: Stage) -> Result<()> {
        if self.stage != expected {
            return Err(Error::WrongStage {
                expected: expected.name(),
                found: self.stage.name(),
            });
        }
        Ok(())
    }
}

/// `S = q_app · q_strᵀ`, unscaled.
pub fn compute_alignment<T: Scalar>(
    q_app: &Matrix<T>,
    q_str: &Matrix<T>,
) -> Result<AlignmentMatrix<T>> {
    if q_app.cols() != q_str.cols() {
        return Err(Error::shape(format!(
            "query channels differ: appearance {} vs structure {}",
            q_app.cols(),
            q_str.cols()
        )));
    }
    matmul(q_app, q_str, true).map(AlignmentMatrix)
}

/// Top-k votes: for each appearance row `r` of `s`, weight `1/k` at `P[c][r]`
/// for the `k` best structure columns `c`. Rows may come out empty.
pub fn build_aggregation<T: Scalar>(
    s: &AlignmentMatrix<T>,
    k: usize,
) -> Result<AggregationMatrix<T>> {
    let (n_app, n_str) = (s.n_app(), s.n_str());
    if n_app != n_str {
        return Err(Error::NonSquare {
            rows: n_app,
            cols: n_str,
        });
    }
    if k == 0 || k > n_str {
        return Err(Error::KOutOfRange { k, max: n_str });
    }
    let weight = T::from_acc(1.0 / k as f64);
    let mut rows = vec![Vec::new(); n_str];
    for (r, srow) in s.0.iter_rows().enumerate() {
        for c in topk_indices(srow, k) {
            rows[c].push((r, weight));
        }
    }
    Ok(AggregationMatrix {
        n: n_str,
        rows,
        stage: Stage::Raw,
    })
}

/// Gives every empty row its diagonal entry with weight 1.
pub fn apply_fallback<T: Scalar>(mut p: AggregationMatrix<T>) -> AggregationMatrix<T> {
    for (r, row) in p.rows.iter_mut().enumerate() {
        if row.is_empty() {
            row.push((r, T::one()));
        }
    }
    p
}

/// Softmax over the nonzero entries of each row; zeros stay zero.
///
/// With top-k votes every nonzero in a row is equal, so the result is the
/// uniform distribution over the row's support. The exponentials are still
/// evaluated so that arbitrary raw weights reweight correctly.
pub fn reweight_softmax<T: Scalar>(p: AggregationMatrix<T>) -> Result<AggregationMatrix<T>> {
    p.expect_stage(Stage::Raw)?;
    let mut rows = p.rows;
    let mut buf = Vec::new();
    for (r, row) in rows.iter_mut().enumerate() {
        if row.is_empty() {
            return Err(Error::EmptyRow(r));
        }
        buf.resize(row.len(), 0.0);
        crate::tensor::ops::softmax_into(row.iter().map(|&(_, w)| w.acc()), &mut buf);
        for ((_, w), &v) in row.iter_mut().zip(&buf) {
            *w = T::from_acc(v);
        }
    }
    Ok(AggregationMatrix {
        n: p.n,
        rows,
        stage: Stage::Reweighted,
    })
}

/// Alignment, top-k votes, fallback and reweighting in one call.
pub fn qq_align_pipeline<T: Scalar>(
    q_app: &Matrix<T>,
    q_str: &Matrix<T>,
    k: usize,
) -> Result<AggregationMatrix<T>> {
    let s = compute_alignment(q_app, q_str)?;
    let p = build_aggregation(&s, k)?;
    reweight_softmax(apply_fallback(p))
}

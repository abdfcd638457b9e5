use crate::align::AlignmentMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ops::topk_indices, Matrix};

/// Fraction of appearance rows whose best structure column is the true match.
pub fn alignment_accuracy<T: Scalar>(s: &AlignmentMatrix<T>, gt_map: &[usize]) -> Result<f64> {
    let m = s.as_matrix();
    if m.rows() != m.cols() || m.rows() != gt_map.len() {
        return Err(Error::shape(format!(
            "{}x{} alignment against {} ground-truth entries",
            m.rows(),
            m.cols(),
            gt_map.len()
        )));
    }
    if gt_map.is_empty() {
        return Err(Error::EmptySelection("ground truth"));
    }
    let hits = m
        .iter_rows()
        .zip(gt_map)
        .filter(|(row, &gt)| topk_indices(row, 1)[0] == gt)
        .count();
    Ok(hits as f64 / gt_map.len() as f64)
}

/// Mean over rows of the attention mass on columns sharing the row's label.
pub fn region_purity<T: Scalar>(
    map: &Matrix<T>,
    row_labels: &[usize],
    col_labels: &[usize],
) -> Result<f64> {
    if map.rows() != row_labels.len() || map.cols() != col_labels.len() {
        return Err(Error::shape(format!(
            "{}x{} map with {} row labels and {} column labels",
            map.rows(),
            map.cols(),
            row_labels.len(),
            col_labels.len()
        )));
    }
    if row_labels.is_empty() {
        return Err(Error::EmptySelection("rows"));
    }
    let total: f64 = map
        .iter_rows()
        .zip(row_labels)
        .map(|(row, &l)| {
            row.iter()
                .zip(col_labels)
                .filter(|(_, &cl)| cl == l)
                .map(|(v, _)| v.acc())
                .sum::<f64>()
        })
        .sum();
    Ok(total / row_labels.len() as f64)
}

//! Cross-image attention, key/value rearrangement and attention contrast.

use crate::align::{AggregationMatrix, Stage};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul, row_softmax, Matrix};

/// Result of one attention call. `map` is row-stochastic, `output = map · V`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput<T> {
    pub output: Matrix<T>,
    pub map: Matrix<T>,
}

/// Appearance keys and values gathered onto structure positions.
#[derive(Debug, Clone, PartialEq)]
pub struct RearrangedKV<T> {
    pub k_star: Matrix<T>,
    pub v_star: Matrix<T>,
}

/// `K* = P′·K_app`, `V* = P′·V_app` using the sparse rows of `P′`.
pub fn rearrange_kv<T: Scalar>(
    p_prime: &AggregationMatrix<T>,
    k_app: &Matrix<T>,
    v_app: &Matrix<T>,
) -> Result<RearrangedKV<T>> {
    p_prime.expect_stage(Stage::Reweighted)?;
    let n = p_prime.n();
    if k_app.rows() != n || v_app.rows() != n {
        return Err(Error::shape(format!(
            "aggregation is {n}x{n} but keys have {} rows and values {}",
            k_app.rows(),
            v_app.rows()
        )));
    }
    Ok(RearrangedKV {
        k_star: gather(p_prime, k_app),
        v_star: gather(p_prime, v_app),
    })
}

fn gather<T: Scalar>(p: &AggregationMatrix<T>, src: &Matrix<T>) -> Matrix<T> {
    let d = src.cols();
    let mut out = Vec::with_capacity(p.n() * d);
    let mut acc = vec![0.0f64; d];
    for row in p.iter_rows() {
        // the first term seeds the accumulator so unit weights copy rows bit-exactly
        let (first, rest) = row.split_first().expect("reweighted rows are nonempty");
        let w = first.1.acc();
        for (a, &x) in acc.iter_mut().zip(src.row(first.0)) {
            *a = w * x.acc();
        }
        for &(j, w) in rest {
            let w = w.acc();
            for (a, &x) in acc.iter_mut().zip(src.row(j)) {
                *a += w * x.acc();
            }
        }
        out.extend(acc.iter().map(|&v| T::from_acc(v)));
    }
    Matrix::from_parts(p.n(), d, out)
}

/// `softmax(Q·Kᵀ/√d)·V` with the contrast transform applied to the map.
pub fn cross_image_attention<T: Scalar>(
    q_out: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    contrast: f64,
) -> Result<AttentionOutput<T>> {
    if q_out.cols() != k.cols() {
        return Err(Error::shape(format!(
            "query channels {} vs key channels {}",
            q_out.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape(format!(
            "{} keys but {} values",
            k.rows(),
            v.rows()
        )));
    }
    check_contrast(contrast)?;
    let logits = matmul(q_out, k, true)?;
    let scale = 1.0 / (q_out.cols() as f64).sqrt();
    let map = apply_contrast(&row_softmax(&logits, scale), contrast)?;
    let mut output = matmul(&map, v, false)?;
    let mut map = map;
    if let Some(g) = q_out.grid() {
        output = output.with_grid(g)?;
        map = map.with_grid(g)?;
    }
    Ok(AttentionOutput { output, map })
}

/// Attention of `q_out` against rearranged keys and values.
pub fn rearranged_attention<T: Scalar>(
    q_out: &Matrix<T>,
    rkv: &RearrangedKV<T>,
    contrast: f64,
) -> Result<AttentionOutput<T>> {
    cross_image_attention(q_out, &rkv.k_star, &rkv.v_star, contrast)
}

/// Attention mass per appearance position, `map · P′`.
///
/// A rearranged map attends over structure-indexed slots whose keys are mixes
/// of appearance keys; pushing it through `P′` gives the weight each source
/// appearance position contributes, so that `map · V* == (map · P′) · V_app`.
pub fn appearance_attention<T: Scalar>(
    map: &Matrix<T>,
    p_prime: &AggregationMatrix<T>,
) -> Result<Matrix<T>> {
    p_prime.expect_stage(Stage::Reweighted)?;
    let n = p_prime.n();
    if map.cols() != n {
        return Err(Error::shape(format!(
            "map has {} columns, aggregation is {n}x{n}",
            map.cols()
        )));
    }
    let mut out = Vec::with_capacity(map.rows() * n);
    let mut acc = vec![0.0f64; n];
    for row in map.iter_rows() {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (&m, slot) in row.iter().zip(p_prime.iter_rows()) {
            let m = m.acc();
            for &(j, w) in slot {
                acc[j] += m * w.acc();
            }
        }
        out.extend(acc.iter().map(|&v| T::from_acc(v)));
    }
    Ok(Matrix::from_parts(map.rows(), n, out))
}

/// Mean-anchored contrast stretch.
///
/// Each row with mean `μ` maps `a ↦ max(0, μ + β(a − μ))` and is renormalized
/// to sum to one. `β = 1` returns the map unchanged; `β > 1` sharpens and
/// `β < 1` flattens.
pub fn apply_contrast<T: Scalar>(map: &Matrix<T>, beta: f64) -> Result<Matrix<T>> {
    check_contrast(beta)?;
    if beta == 1.0 {
        return Ok(map.clone());
    }
    let cols = map.cols();
    let mut out = Vec::with_capacity(map.rows() * cols);
    let mut buf = vec![0.0f64; cols];
    for (r, row) in map.iter_rows().enumerate() {
        let mean = row.iter().map(|v| v.acc()).sum::<f64>() / cols as f64;
        let mut sum = 0.0;
        for (slot, v) in buf.iter_mut().zip(row) {
            *slot = (mean + beta * (v.acc() - mean)).max(0.0);
            sum += *slot;
        }
        if !(sum > 0.0) {
            return Err(Error::DegenerateRow(r));
        }
        out.extend(buf.iter().map(|&v| T::from_acc(v / sum)));
    }
    let mut m = Matrix::from_parts(map.rows(), cols, out);
    if let Some(g) = map.grid() {
        m = m.with_grid(g)?;
    }
    Ok(m)
}

fn check_contrast(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "contrast must be positive and finite, got {beta}"
        )))
    }
}

use std::cmp::Ordering;

use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `a · b` or, with `transpose_b`, `a · bᵀ`. Dot products accumulate in f64
/// in ascending index order.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, transpose_b: bool) -> Result<Matrix<T>> {
    let (n, inner) = a.shape();
    if transpose_b {
        if b.cols() != inner {
            return Err(Error::shape(format!(
                "matmul: {}x{} by ({}x{})ᵀ",
                n,
                inner,
                b.rows(),
                b.cols()
            )));
        }
        let m = b.rows();
        let mut out = Vec::with_capacity(n * m);
        for ar in a.iter_rows() {
            for br in b.iter_rows() {
                let dot: f64 = ar.iter().zip(br).map(|(&x, &y)| x.acc() * y.acc()).sum();
                out.push(T::from_acc(dot));
            }
        }
        Ok(Matrix::from_parts(n, m, out))
    } else {
        if b.rows() != inner {
            return Err(Error::shape(format!(
                "matmul: {}x{} by {}x{}",
                n,
                inner,
                b.rows(),
                b.cols()
            )));
        }
        let m = b.cols();
        let mut out = Vec::with_capacity(n * m);
        let mut acc = vec![0.0f64; m];
        for ar in a.iter_rows() {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for (i, &x) in ar.iter().enumerate() {
                let x = x.acc();
                for (slot, &y) in acc.iter_mut().zip(b.row(i)) {
                    *slot += x * y.acc();
                }
            }
            out.extend(acc.iter().map(|&v| T::from_acc(v)));
        }
        Ok(Matrix::from_parts(n, m, out))
    }
}

pub fn transpose<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let (r, c) = m.shape();
    let src = m.as_slice();
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            out.push(src[i * c + j]);
        }
    }
    Matrix::from_parts(c, r, out)
}

/// Softmax of `scale * m` along each row, with per-row max subtraction.
pub fn row_softmax<T: Scalar>(m: &Matrix<T>, scale: f64) -> Matrix<T> {
    let mut out = Vec::with_capacity(m.rows() * m.cols());
    let mut buf = vec![0.0f64; m.cols()];
    for row in m.iter_rows() {
        softmax_into(row.iter().map(|v| scale * v.acc()), &mut buf);
        out.extend(buf.iter().map(|&v| T::from_acc(v)));
    }
    let mut out = Matrix::from_parts(m.rows(), m.cols(), out);
    if let Some(g) = m.grid() {
        out = out.with_grid(g).expect("grid preserved");
    }
    out
}

/// Numerically stable softmax of `logits` written into `out`.
pub(crate) fn softmax_into(logits: impl Iterator<Item = f64> + Clone, out: &mut [f64]) {
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (slot, l) in out.iter_mut().zip(logits) {
        *slot = (l - max).exp();
        sum += *slot;
    }
    for slot in out.iter_mut() {
        *slot /= sum;
    }
}

/// Column indices of the `k` largest entries of every row, largest first.
/// Ties go to the lowest column index.
pub fn row_topk<T: Scalar>(m: &Matrix<T>, k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > m.cols() {
        return Err(Error::KOutOfRange { k, max: m.cols() });
    }
    Ok(m.iter_rows().map(|row| topk_indices(row, k)).collect())
}

pub(crate) fn topk_indices<T: Scalar>(row: &[T], k: usize) -> Vec<usize> {
    if k == 1 {
        let mut best = 0;
        for (c, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = c;
            }
        }
        return vec![best];
    }
    let mut idx: Vec<usize> = (0..row.len()).collect();
    // stable sort keeps ascending index order among equal values
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type M = Matrix<f32>;

    #[test]
    fn matmul_identity() {
        let i = M::identity(2);
        let b = M::from_rows(&[[3.0, 4.0], [5.0, 6.0]]);
        assert_eq!(matmul(&i, &b, false).unwrap(), b);
    }

    #[test]
    fn matmul_row_by_column() {
        let a = M::from_rows(&[[1.0, 2.0]]);
        let b = M::from_rows(&[[3.0], [4.0]]);
        assert_eq!(matmul(&a, &b, false).unwrap().as_slice(), &[11.0]);
        // same product through the transposed route
        let bt = M::from_rows(&[[3.0, 4.0]]);
        assert_eq!(matmul(&a, &bt, true).unwrap().as_slice(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = M::zeros(2, 3);
        let b = M::zeros(2, 2);
        assert!(matches!(
            matmul(&a, &b, false),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn transpose_roundtrip() {
        let a = M::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let t = transpose(&a);
        assert_eq!(t.shape(), (3, 2));
        assert_eq!(t.get(2, 1), 6.0);
        assert_eq!(transpose(&t), a);
    }

    #[test]
    fn softmax_examples() {
        let m = M::from_rows(&[[0.0, 0.0]]);
        assert_eq!(row_softmax(&m, 1.0).as_slice(), &[0.5, 0.5]);

        let m = M::from_rows(&[[1e4, 0.0]]);
        let s = row_softmax(&m, 1.0);
        assert!((s.get(0, 0) - 1.0).abs() < 1e-6 && s.get(0, 1).abs() < 1e-6);

        // exp(1/sqrt 2) / (exp(1/sqrt 2) + 1), computed offline
        let m = M::from_rows(&[[1.0, 0.0]]);
        let s = row_softmax(&m, 1.0 / 2f64.sqrt());
        assert!((s.get(0, 0) as f64 - 0.669_761_55).abs() < 1e-6);
        assert!((s.get(0, 1) as f64 - 0.330_238_45).abs() < 1e-6);
    }

    #[test]
    fn topk_examples() {
        let m = M::from_rows(&[[0.1, 0.9, 0.5]]);
        assert_eq!(row_topk(&m, 1).unwrap(), vec![vec![1]]);
        let m = M::from_rows(&[[0.5, 0.5]]);
        assert_eq!(row_topk(&m, 1).unwrap(), vec![vec![0]]);
        let m = M::from_rows(&[[3.0, 1.0, 2.0]]);
        assert_eq!(row_topk(&m, 2).unwrap(), vec![vec![0, 2]]);
        assert!(matches!(row_topk(&m, 0), Err(Error::KOutOfRange { .. })));
        assert!(matches!(row_topk(&m, 4), Err(Error::KOutOfRange { .. })));
    }

    #[test]
    fn topk_ties_prefer_low_index_for_k_above_one() {
        let m = M::from_rows(&[[1.0, 2.0, 2.0, 2.0]]);
        assert_eq!(row_topk(&m, 2).unwrap(), vec![vec![1, 2]]);
    }

    fn naive_matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    out[i * n + j] += a[i * n + l] * b[l * n + j];
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(
            rows in 1usize..6,
            cols in 1usize..12,
            seed in proptest::collection::vec(-50.0f64..50.0, 72),
            scale in 0.01f64..4.0,
        ) {
            let data: Vec<f32> = (0..rows * cols).map(|i| seed[i % seed.len()] as f32).collect();
            let m = M::from_vec(rows, cols, data).unwrap();
            let s = row_softmax(&m, scale);
            for r in s.iter_rows() {
                let sum: f64 = r.iter().map(|&v| v as f64).sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn topk_selects_largest(
            row in proptest::collection::vec(-5i32..5, 1..20),
            k_frac in 0.0f64..1.0,
        ) {
            let cols = row.len();
            let k = 1 + ((cols - 1) as f64 * k_frac) as usize;
            let m = M::from_vec(1, cols, row.iter().map(|&v| v as f32).collect()).unwrap();
            let sel = &row_topk(&m, k).unwrap()[0];
            let mut uniq = sel.clone();
            uniq.sort_unstable();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), k);
            let min_sel = sel.iter().map(|&c| row[c]).min().unwrap();
            let max_rest = (0..cols).filter(|c| !sel.contains(c)).map(|c| row[c]).max();
            if let Some(mx) = max_rest {
                prop_assert!(min_sel >= mx);
            }
        }

        #[test]
        fn matmul_matches_triple_loop(
            a in proptest::collection::vec(-1.0f32..1.0, 256),
            b in proptest::collection::vec(-1.0f32..1.0, 256),
        ) {
            let ma = M::from_vec(16, 16, a.clone()).unwrap();
            let mb = M::from_vec(16, 16, b.clone()).unwrap();
            let got = matmul(&ma, &mb, false).unwrap();
            let want = naive_matmul(
                &a.iter().map(|&v| v as f64).collect::<Vec<_>>(),
                &b.iter().map(|&v| v as f64).collect::<Vec<_>>(),
                16,
            );
            for (g, w) in got.as_slice().iter().zip(&want) {
                prop_assert!((*g as f64 - w).abs() <= 1e-5 * w.abs().max(1.0));
            }
        }
    }
}

//! Threshold sparsification of coefficient matrices and the compressed-row
//! matrix–vector product.
//!
//! Entries of `Q` and `M_n` decay quickly away from the diagonal; everything at
//! or below a threshold is dropped. Dropping entries of magnitude at most `θ`
//! changes `A·v` by at most `θ·ncols·‖v‖∞` in max-norm.

use crate::error::{EtdError, Result};
use crate::matrix::{DenseMatrix, MatVec};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    threshold: f64,
}

/// Storage statistics reported by the harness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparsityStats {
    pub nnz: usize,
    pub dense_len: usize,
}

impl SparsityStats {
    /// Stored fraction of the dense entry count.
    pub fn fill_ratio(&self) -> f64 {
        if self.dense_len == 0 {
            0.0
        } else {
            self.nnz as f64 / self.dense_len as f64
        }
    }

    /// Dense entry count divided by stored entries.
    pub fn compression_ratio(&self) -> f64 {
        if self.nnz == 0 {
            f64::INFINITY
        } else {
            self.dense_len as f64 / self.nnz as f64
        }
    }
}

/// Keeps the entries with `|value| > threshold`.
pub fn sparsify(dense: &DenseMatrix, threshold: f64) -> Result<SparseMatrix> {
    if !(threshold >= 0.0) {
        return Err(EtdError::Config(format!(
            "sparsity threshold must be non-negative, got {threshold}"
        )));
    }
    let (n_rows, n_cols) = (dense.nrows(), dense.ncols());
    let mut row_offsets = Vec::with_capacity(n_rows + 1);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    row_offsets.push(0);
    for i in 0..n_rows {
        for (j, &v) in dense.row(i).iter().enumerate() {
            if v.abs() > threshold {
                col_indices.push(j);
                values.push(v);
            }
        }
        row_offsets.push(values.len());
    }
    Ok(SparseMatrix {
        n_rows,
        n_cols,
        row_offsets,
        col_indices,
        values,
        threshold,
    })
}

impl SparseMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stats(&self) -> SparsityStats {
        SparsityStats {
            nnz: self.nnz(),
            dense_len: self.n_rows * self.n_cols,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for p in self.row_offsets[i]..self.row_offsets[i + 1] {
                m[(i, self.col_indices[p])] = self.values[p];
            }
        }
        m
    }
}

impl MatVec for SparseMatrix {
    fn nrows(&self) -> usize {
        self.n_rows
    }
    fn ncols(&self) -> usize {
        self.n_cols
    }
    fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
            *yi = self.col_indices[lo..hi]
                .iter()
                .zip(&self.values[lo..hi])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }
}

/// `m·v` with a length check.
pub fn sparse_matvec(m: &SparseMatrix, v: &[f64]) -> Result<Vec<f64>> {
    m.matvec(v)
}

/// A coefficient matrix in whichever storage the stepper was prepared with.
#[derive(Clone, Debug)]
pub enum Operator {
    Dense(DenseMatrix),
    Sparse(SparseMatrix),
}

impl Operator {
    /// Dense when `threshold == 0`, compressed rows otherwise.
    pub fn prepare(m: &DenseMatrix, threshold: f64) -> Result<Self> {
        if threshold == 0.0 {
            Ok(Operator::Dense(m.clone()))
        } else {
            Ok(Operator::Sparse(sparsify(m, threshold)?))
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            Operator::Dense(m) => m.count_nonzero(),
            Operator::Sparse(s) => s.nnz(),
        }
    }
}

impl MatVec for Operator {
    fn nrows(&self) -> usize {
        match self {
            Operator::Dense(m) => m.nrows(),
            Operator::Sparse(s) => s.nrows(),
        }
    }
    fn ncols(&self) -> usize {
        match self {
            Operator::Dense(m) => m.ncols(),
            Operator::Sparse(s) => s.ncols(),
        }
    }
    #[inline]
    fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Operator::Dense(m) => m.matvec_into(x, y),
            Operator::Sparse(s) => s.matvec_into(x, y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_keeps_diagonal() {
        let s = sparsify(&DenseMatrix::identity(3), 0.5).unwrap();
        assert_eq!(s.nnz(), 3);
        assert_eq!(s.values(), &[1.0, 1.0, 1.0]);
        assert_eq!(sparse_matvec(&s, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn drops_roundoff_level_entries() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 1e-17], vec![1e-17, 1.0]]).unwrap();
        let s = sparsify(&m, 1e-16).unwrap();
        assert_eq!(s.nnz(), 2);
        assert_eq!(s.col_indices(), &[0, 1]);
    }

    #[test]
    fn entry_equal_to_threshold_is_dropped() {
        let m = DenseMatrix::from_rows(&[vec![0.5, 0.25]]).unwrap();
        assert_eq!(sparsify(&m, 0.25).unwrap().nnz(), 1);
    }

    #[test]
    fn five_by_five_product() {
        #[rustfmt::skip]
        let rows = vec![
            vec![ 2.0,  0.0, -1.0,  0.0,  3.0],
            vec![ 0.0,  1.5,  0.0,  0.0,  0.0],
            vec![-4.0,  0.0,  0.5,  2.0,  0.0],
            vec![ 0.0,  0.0,  0.0,  0.0,  0.0],
            vec![ 1.0, -1.0,  1.0, -1.0,  1.0],
        ];
        let v = [1.0, 2.0, -1.0, 0.5, -2.0];
        // row by row: 2+1-6, 3, -4-0.5+1, 0, 1-2-1-0.5-2
        let expect = [-3.0, 3.0, -3.5, 0.0, -4.5];
        let s = sparsify(&DenseMatrix::from_rows(&rows).unwrap(), 0.0).unwrap();
        assert_eq!(s.nnz(), 12);
        assert_eq!(sparse_matvec(&s, &v).unwrap(), expect);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let s = sparsify(&DenseMatrix::identity(3), 0.0).unwrap();
        assert!(matches!(
            sparse_matvec(&s, &[1.0]),
            Err(EtdError::DimensionMismatch { expected: 3, got: 1 })
        ));
        assert!(sparsify(&DenseMatrix::identity(3), -1.0).is_err());
    }

    fn dense_strategy() -> impl Strategy<Value = (DenseMatrix, Vec<f64>)> {
        (1usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(prop_oneof![Just(0.0), -1e-3..1e-3f64, -2.0..2.0f64], n * n),
                prop::collection::vec(-5.0..5.0f64, n),
            )
                .prop_map(move |(data, v)| (DenseMatrix::from_row_major(n, n, data).unwrap(), v))
        })
    }

    proptest! {
        #[test]
        fn dropped_mass_bounds_the_product_error((m, v) in dense_strategy(), theta in 0.0..1e-2f64) {
            let s = sparsify(&m, theta).unwrap();
            let exact = m.matvec(&v).unwrap();
            let approx = sparse_matvec(&s, &v).unwrap();
            let vmax = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let n = v.len() as f64;
            let bound = theta * n * vmax + 1e-13 * (1.0 + vmax * n);
            for (a, b) in exact.iter().zip(&approx) {
                prop_assert!((a - b).abs() <= bound);
            }
        }

        #[test]
        fn structure_invariants((m, _v) in dense_strategy(), theta in 0.0..1e-2f64) {
            let s = sparsify(&m, theta).unwrap();
            prop_assert_eq!(s.row_offsets().len(), m.nrows() + 1);
            prop_assert_eq!(*s.row_offsets().last().unwrap(), s.nnz());
            for w in s.row_offsets().windows(2) {
                prop_assert!(w[0] <= w[1]);
                let cols = &s.col_indices()[w[0]..w[1]];
                prop_assert!(cols.windows(2).all(|c| c[0] < c[1]));
            }
            prop_assert!(s.values().iter().all(|v| v.abs() > theta));
            let kept = s.to_dense();
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if kept[(i, j)] == 0.0 {
                        prop_assert!(m[(i, j)].abs() <= theta);
                    } else {
                        prop_assert_eq!(kept[(i, j)], m[(i, j)]);
                    }
                }
            }
        }

        #[test]
        fn nnz_is_monotone_in_threshold((m, _v) in dense_strategy(), a in 0.0..1e-2f64, b in 0.0..1e-2f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(sparsify(&m, hi).unwrap().nnz() <= sparsify(&m, lo).unwrap().nnz());
            prop_assert_eq!(sparsify(&m, 0.0).unwrap().nnz(), m.count_nonzero());
        }

        #[test]
        fn lossless_sparsification_matches_dense((m, v) in dense_strategy()) {
            let s = sparsify(&m, 0.0).unwrap();
            let exact = m.matvec(&v).unwrap();
            let approx = sparse_matvec(&s, &v).unwrap();
            let n = v.len() as f64;
            let vmax = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let bound = n * n * f64::EPSILON * m.max_abs() * vmax;
            for (a, b) in exact.iter().zip(&approx) {
                prop_assert!((a - b).abs() <= bound);
            }
        }
    }
}

//! Compressed-row sparse matrices for the constant hop operators.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T> {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    /// Builds from a dense row-major matrix, keeping entries with nonzero value.
    pub fn from_dense(n_rows: usize, n_cols: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), n_rows * n_cols);
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n_rows {
            for j in 0..n_cols {
                let v = dense[i * n_cols + j];
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(T::lit(v));
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Binary pattern of `dense`, with a diagonal entry inserted in any row
    /// that would otherwise be empty.
    pub fn support_of(n: usize, dense: &[f64]) -> Self {
        let mut pattern: Vec<f64> = dense.iter().map(|&v| if v != 0.0 { 1.0 } else { 0.0 }).collect();
        for i in 0..n {
            if pattern[i * n..(i + 1) * n].iter().all(|&v| v == 0.0) {
                pattern[i * n + i] = 1.0;
            }
        }
        Self::from_dense(n, n, &pattern)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn col(&self, p: usize) -> usize {
        self.col_idx[p]
    }

    pub fn value(&self, p: usize) -> T {
        self.values[p]
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_rows * self.n_cols];
        for i in 0..self.n_rows {
            for p in self.row_range(i) {
                out[i * self.n_cols + self.col_idx[p]] = self.values[p];
            }
        }
        out
    }
}

//! Coordinate-format sparse matrices with row-major sorted, unique entries.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::LinearOperator;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            rows: Vec::new(),
            cols: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from triplets; they are sorted row-major and must not repeat a
    /// location.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in triplets.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate entry ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        if let Some(t) = triplets.iter().find(|t| t.0 >= n_rows || t.1 >= n_cols) {
            return Err(Error::InvalidArgument(format!(
                "entry ({}, {}) outside {n_rows}x{n_cols}",
                t.0, t.1
            )));
        }
        let rows = triplets.iter().map(|t| t.0).collect();
        let cols = triplets.iter().map(|t| t.1).collect();
        let values = triplets.iter().map(|t| t.2).collect();
        Ok(Self {
            n_rows,
            n_cols,
            rows,
            cols,
            values,
        })
    }

    /// Caller guarantees sorted unique in-range coordinates.
    pub(crate) fn from_sorted_parts(
        n_rows: usize,
        n_cols: usize,
        rows: Vec<usize>,
        cols: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(rows.len(), values.len());
        debug_assert_eq!(cols.len(), values.len());
        Self {
            n_rows,
            n_cols,
            rows,
            cols,
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.values)
            .map(|((&i, &j), &v)| (i, j, v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let start = self.rows.partition_point(|&r| r < i);
        let end = self.rows.partition_point(|&r| r <= i);
        match self.cols[start..end].binary_search(&j) {
            Ok(k) => self.values[start + k],
            Err(_) => 0.0,
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.iter() {
            d[(i, j)] += v;
        }
        d
    }
}

impl LinearOperator for SparseMatrix {
    fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n_cols, "sparse apply: inner dimension");
        scatter(x, self.n_rows, &self.cols, &self.rows, &self.values)
    }

    fn apply_transpose(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(
            y.nrows(),
            self.n_rows,
            "sparse apply_transpose: inner dimension"
        );
        scatter(y, self.n_cols, &self.rows, &self.cols, &self.values)
    }
}

/// `out[dst[e], :] += values[e] * x[src[e], :]` over all entries, done on
/// transposed copies so each update touches contiguous memory.
fn scatter(x: &DMatrix<f64>, out_rows: usize, src: &[usize], dst: &[usize], values: &[f64]) -> DMatrix<f64> {
    let k = x.ncols();
    let xt = x.transpose();
    let xs = xt.as_slice();
    let mut out_t = DMatrix::zeros(k, out_rows);
    let os = out_t.as_mut_slice();
    for ((&i, &j), &v) in dst.iter().zip(src).zip(values) {
        let from = &xs[j * k..(j + 1) * k];
        for (o, f) in os[i * k..(i + 1) * k].iter_mut().zip(from) {
            *o += v * f;
        }
    }
    out_t.transpose()
}

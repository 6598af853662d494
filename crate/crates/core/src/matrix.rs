//! Row-major dense data matrix and a few shared linear-algebra helpers.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows per work unit in parallel row-wise products.
const ROW_CHUNK: usize = 256;

/// An `n × d` collection of vectors stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: values.len(),
            });
        }
        Ok(DataMatrix { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DataMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(DataMatrix {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        // nalgebra is column-major, so the transpose's storage is our row-major layout.
        DataMatrix {
            rows,
            cols,
            values: m.transpose().as_slice().to_vec(),
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on an empty-width matrix would panic
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> DataMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        DataMatrix {
            rows: indices.len(),
            cols: self.cols,
            values,
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        if self.rows > 0 {
            let inv = 1.0 / self.rows as f64;
            mean.iter_mut().for_each(|m| *m *= inv);
        }
        mean
    }

    /// Apply `proj` (`m × d`) to every row, giving the `n × m` matrix of `proj · xᵢ`.
    ///
    /// Rows are processed in parallel chunks; each output row depends only on
    /// its input row, so the result does not depend on scheduling.
    pub fn project(&self, proj: &DMatrix<f64>) -> Result<DataMatrix> {
        if proj.ncols() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: proj.ncols(),
            });
        }
        let out_cols = proj.nrows();
        let mut out = vec![0.0; self.rows * out_cols];
        if self.cols == 0 || out_cols == 0 {
            return DataMatrix::new(self.rows, out_cols, out);
        }
        out.par_chunks_mut(ROW_CHUNK * out_cols)
            .zip(self.values.par_chunks(ROW_CHUNK * self.cols))
            .for_each(|(dst, src)| {
                let count = src.len() / self.cols;
                // A row-major c×d block is the column-major storage of its d×c transpose.
                let block = DMatrix::from_column_slice(self.cols, count, src);
                let product = proj * block;
                dst.copy_from_slice(product.as_slice());
            });
        DataMatrix::new(self.rows, out_cols, out)
    }

    /// Subtract `offset` from every row.
    pub fn subtract_row(&self, offset: &[f64]) -> Result<DataMatrix> {
        if offset.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: offset.len(),
            });
        }
        let mut out = self.clone();
        if self.cols > 0 {
            out.values.par_chunks_mut(self.cols).for_each(|row| {
                for (v, o) in row.iter_mut().zip(offset) {
                    *v -= o;
                }
            });
        }
        Ok(out)
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Largest absolute entry of `MᵀM − I`.
pub fn orthogonality_residual(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let mut worst: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Thin SVD with singular triplets in descending order of singular value.
pub(crate) struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub v_t: DMatrix<f64>,
}

pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let values = svd.singular_values;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let rank = order.len();
    let mut su = DMatrix::zeros(u.nrows(), rank);
    let mut sv = DMatrix::zeros(rank, v_t.ncols());
    let mut ss = DVector::zeros(rank);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_row(dst, &v_t.row(src));
        ss[dst] = values[src];
    }
    SortedSvd {
        u: su,
        singular_values: ss,
        v_t: sv,
    }
}

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Coordinate-format sparse matrix used as a constant operator in message
/// passing (adjacency, pooling, gather/scatter between subgraph copies).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::dim(format!(
                    "sparse entry ({r}, {c}) out of range for {rows}x{cols}"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn square(n: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        Self::new(n, n, entries)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            entries: (0..n).map(|i| (i, i, 1.0)).collect(),
        }
    }

    /// Symmetric operator with one weighted entry per direction of every edge.
    pub fn from_undirected(n: usize, edges: &[(usize, usize)], weights: &[f64]) -> Result<Self> {
        if edges.len() != weights.len() {
            return Err(Error::dim(format!(
                "{} edges but {} weights",
                edges.len(),
                weights.len()
            )));
        }
        let mut entries = Vec::with_capacity(2 * edges.len());
        for (&(i, j), &w) in edges.iter().zip(weights) {
            entries.push((i, j, w));
            entries.push((j, i, w));
        }
        Self::square(n, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            entries: self.entries.iter().map(|&(r, c, w)| (c, r, w)).collect(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.to_dense() == self.transpose().to_dense()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for &(r, c, w) in &self.entries {
            out[(r, c)] += w;
        }
        out
    }

    /// `self · x`.
    pub fn matmul(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.cols {
            return Err(Error::dim(format!(
                "spmm: operator is {}x{} but dense input has {} rows",
                self.rows,
                self.cols,
                x.nrows()
            )));
        }
        let mut out = Array2::zeros((self.rows, x.ncols()));
        for &(r, c, w) in &self.entries {
            out.row_mut(r).scaled_add(w, &x.row(c));
        }
        Ok(out)
    }

    /// `selfᵀ · g` without materializing the transpose.
    pub fn t_matmul(&self, g: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if g.nrows() != self.rows {
            return Err(Error::dim(format!(
                "spmm transpose: operator is {}x{} but dense input has {} rows",
                self.rows,
                self.cols,
                g.nrows()
            )));
        }
        let mut out = Array2::zeros((self.cols, g.ncols()));
        for &(r, c, w) in &self.entries {
            out.row_mut(c).scaled_add(w, &g.row(r));
        }
        Ok(out)
    }
}

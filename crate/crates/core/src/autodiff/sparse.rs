use crate::error::{Error, Result};

/// Coordinate-list sparse matrix with entries sorted by `(row, col)` and no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from unordered triplets. Duplicate coordinates are rejected.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut rows = Vec::with_capacity(triplets.len());
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for (i, &(r, c, v)) in triplets.iter().enumerate() {
            if r >= n_rows || c >= n_cols {
                return Err(Error::contract(
                    "sparse_matrix",
                    format!("entry ({r}, {c}) outside {n_rows}x{n_cols}"),
                ));
            }
            if i > 0 && triplets[i - 1].0 == r && triplets[i - 1].1 == c {
                return Err(Error::contract(
                    "sparse_matrix",
                    format!("duplicate entry ({r}, {c})"),
                ));
            }
            rows.push(r);
            cols.push(c);
            values.push(v);
        }
        Ok(Self {
            n_rows,
            n_cols,
            rows,
            cols,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.values)
            .map(|((&r, &c), &v)| (r, c, v))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let lo = self.rows.partition_point(|&r| r < row);
        let hi = self.rows.partition_point(|&r| r <= row);
        match self.cols[lo..hi].binary_search(&col) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * self.n_cols];
        for (r, c, v) in self.entries() {
            out[r * self.n_cols + c] = v;
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self.entries().all(|(r, c, v)| self.get(c, r) == v)
    }

    /// Applies a vertex relabeling: entry `(r, c)` moves to `(perm[r], perm[c])`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_rows || self.n_rows != self.n_cols {
            return Err(Error::contract(
                "sparse_matrix",
                "permutation length must match a square matrix",
            ));
        }
        Self::from_triplets(
            self.n_rows,
            self.n_cols,
            self.entries()
                .map(|(r, c, v)| (perm[r], perm[c], v))
                .collect(),
        )
    }
}

//! Compressed-row storage for the scalar Laplacian and the vector-valued
//! divergence/gradient blocks.

use rayon::prelude::*;

use crate::geom::Vec2;

/// Scalar CSR matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    /// Build from `(row, col, value)` triplets. Duplicates are summed in the
    /// order they were pushed, so two triplet streams that push the same
    /// values in the same order produce bit-identical entries.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col = Vec::with_capacity(trip.len());
        let mut val: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            debug_assert!(r < n_rows && c < n_cols);
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(c);
                val.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col,
            val,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col[range.clone()].iter().copied().zip(self.val[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col[range.clone()].binary_search(&c) {
            Ok(k) => self.val[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, r)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        y.par_iter_mut().enumerate().with_min_len(256).for_each(|(r, out)| {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.val[k] * x[self.col[k]];
            }
            *out = acc;
        });
    }

    /// Replace row and column `i` with the identity row (used to pin a cell).
    pub fn pin(&mut self, i: usize) {
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col[k];
                if r == i || c == i {
                    self.val[k] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
        if self.get(i, i) == 0.0 {
            let mut trip = self.triplets();
            trip.push((i, i, 1.0));
            *self = Self::from_triplets(self.n_rows, self.n_cols, trip);
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                out.push((r, c, v));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n_cols]; self.n_rows];
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                m[r][c] += v;
            }
        }
        m
    }
}

/// CSR matrix whose entries are 2-vectors. Used for the divergence
/// (cells x particles, applied to per-particle vectors) and the gradient
/// (particles x cells, applied to per-cell scalars).
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCsr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<Vec2>,
}

impl BlockCsr {
    /// Rows must be given in order with strictly increasing column indices.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, Vec2)>>) -> Self {
        let n_rows = rows.len();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut col = Vec::with_capacity(nnz);
        let mut val = Vec::with_capacity(nnz);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (c, v) in row {
                debug_assert!(c < n_cols);
                col.push(c);
                val.push(v);
            }
            row_ptr.push(col.len());
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col,
            val,
        }
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Vec2)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col[range.clone()].iter().copied().zip(self.val[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> Vec2 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col[range.clone()].binary_search(&c) {
            Ok(k) => self.val[range.start + k],
            Err(_) => Vec2::zeros(),
        }
    }

    /// `y_r = sum_c val(r, c) . v_c`.
    pub fn apply_to_vectors(&self, v: &[Vec2]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_cols);
        (0..self.n_rows)
            .into_par_iter()
            .with_min_len(256)
            .map(|r| self.row(r).fold(0.0, |acc, (c, d)| acc + d.dot(&v[c])))
            .collect()
    }

    /// `y_r = sum_c val(r, c) * s_c`.
    pub fn apply_to_scalars(&self, s: &[f64]) -> Vec<Vec2> {
        assert_eq!(s.len(), self.n_cols);
        (0..self.n_rows)
            .into_par_iter()
            .with_min_len(256)
            .map(|r| self.row(r).fold(Vec2::zeros(), |acc, (c, g)| acc + g * s[c]))
            .collect()
    }

    /// Exact negated transpose.
    pub fn neg_transpose(&self) -> BlockCsr {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col = vec![0usize; self.nnz()];
        let mut val = vec![Vec2::zeros(); self.nnz()];
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col[k];
                let dst = next[c];
                col[dst] = r;
                val[dst] = -self.val[k];
                next[c] += 1;
            }
        }
        BlockCsr {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col,
            val,
        }
    }

    /// `M_km = sum_i w_i val(k, i) . val(m, i)`, i.e. `B W B^T` for this
    /// matrix `B`. Contributions are summed in increasing `i` for both
    /// `(k, m)` and `(m, k)`, so the result is exactly symmetric.
    pub fn weighted_gram(&self, weights: &[f64]) -> Csr {
        assert_eq!(weights.len(), self.n_cols);
        let bt = self.neg_transpose();
        let mut trip = Vec::new();
        for i in 0..bt.n_rows {
            let w = weights[i];
            let entries: Vec<(usize, Vec2)> = bt.row(i).collect();
            for &(k, dk) in &entries {
                for &(m, dm) in &entries {
                    // Both factors carry the sign flip from neg_transpose.
                    trip.push((k, m, w * dk.dot(&dm)));
                }
            }
        }
        Csr::from_triplets(self.n_rows, self.n_rows, trip)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

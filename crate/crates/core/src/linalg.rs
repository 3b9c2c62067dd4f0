//! Sparse storage and a banded LU used by the full-order solvers.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Compressed sparse row pattern, column indices sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePattern {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
}

impl SparsePattern {
    /// Builds a pattern from per-row column lists (duplicates removed).
    pub fn from_rows(n_cols: usize, mut rows: Vec<Vec<usize>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        Self { n_rows: rows.len(), n_cols, row_ptr, col_idx }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Position of `(row, col)` in the value array, if stored.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let start = self.row_ptr[row];
        let cols = &self.col_idx[start..self.row_ptr[row + 1]];
        cols.binary_search(&col).ok().map(|k| start + k)
    }
}

/// CSR matrix; matrices built on one mesh share a single pattern.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub pattern: Arc<SparsePattern>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<SparsePattern>) -> Self {
        let nnz = pattern.nnz();
        Self { pattern, values: vec![0.0; nnz] }
    }

    pub fn n_rows(&self) -> usize {
        self.pattern.n_rows
    }

    pub fn add_at(&mut self, row: usize, col: usize, v: f64) {
        let k = self
            .pattern
            .find(row, col)
            .unwrap_or_else(|| panic!("entry ({row}, {col}) not in sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.find(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.pattern.row_ptr[row]..self.pattern.row_ptr[row + 1];
        self.pattern.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows()];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        let p = &self.pattern;
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                s += self.values[k] * x[p.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `sum_q c_q A_q` over matrices sharing this pattern.
    pub fn linear_combination(mats: &[&CsrMatrix], coeffs: &[f64]) -> CsrMatrix {
        assert_eq!(mats.len(), coeffs.len());
        let pattern = mats[0].pattern.clone();
        let mut values = vec![0.0; pattern.nnz()];
        for (m, &c) in mats.iter().zip(coeffs) {
            debug_assert!(Arc::ptr_eq(&m.pattern, &pattern) || *m.pattern == *pattern);
            if c == 0.0 {
                continue;
            }
            for (v, &a) in values.iter_mut().zip(&m.values) {
                *v += c * a;
            }
        }
        CsrMatrix { pattern, values }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.pattern.n_rows, self.pattern.n_cols);
        for i in 0..self.n_rows() {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals, row-major.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku);
        i * self.width + (j + self.kl - i)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku && i < self.n && j < self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Replaces row `i` by the unit row `e_i`.
    pub fn set_identity_row(&mut self, i: usize) {
        let start = i * self.width;
        self.data[start..start + self.width].fill(0.0);
        let k = self.idx(i, i);
        self.data[k] = 1.0;
    }

    /// Copies the block of `a` selected by `local_of` (global row/column to
    /// band index) into band storage.
    pub fn from_csr_block(a: &CsrMatrix, local_of: &[Option<usize>], n: usize, kl: usize, ku: usize) -> Self {
        let mut band = Self::zeros(n, kl, ku);
        for (gi, li) in local_of.iter().enumerate() {
            let Some(li) = *li else { continue };
            for (gj, v) in a.row(gi) {
                if let Some(lj) = local_of[gj] {
                    band.add(li, lj, v);
                }
            }
        }
        band
    }

    /// In-place LU without pivoting. Valid for matrices whose symmetric part
    /// is positive definite and for such matrices with unit rows substituted.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let mut scale = 0.0f64;
        for v in &self.data {
            scale = scale.max(v.abs());
        }
        let tiny = scale * 1e-14 + f64::MIN_POSITIVE;
        for k in 0..n {
            let pivot = self.data[self.idx(k, k)];
            if !pivot.is_finite() || pivot.abs() <= tiny {
                return Err(Error::Singular(format!("zero pivot {pivot:e} at row {k}")));
            }
            let inv = 1.0 / pivot;
            let i_end = (k + self.kl).min(n - 1);
            let j_end = (k + self.ku).min(n - 1);
            let row_k = k * self.width;
            for i in k + 1..=i_end {
                let row_i = i * self.width;
                let lik_pos = row_i + (k + self.kl - i);
                let l = self.data[lik_pos] * inv;
                self.data[lik_pos] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=j_end {
                    let akj = self.data[row_k + (j + self.kl - k)];
                    self.data[row_i + (j + self.kl - i)] -= l * akj;
                }
            }
        }
        Ok(BandLu { m: self })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let j0 = i.saturating_sub(self.kl);
            let j1 = (i + self.ku).min(self.n - 1);
            let mut s = 0.0;
            for j in j0..=j1 {
                s += self.data[self.idx(i, j)] * x[j];
            }
            *yi = s;
        }
        y
    }
}

/// Factored band matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.m.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.m;
        let n = m.n;
        // forward: L y = b, unit diagonal
        for i in 0..n {
            let j0 = i.saturating_sub(m.kl);
            let row = i * m.width;
            let mut s = b[i];
            for j in j0..i {
                s -= m.data[row + (j + m.kl - i)] * b[j];
            }
            b[i] = s;
        }
        // backward: U x = y
        for i in (0..n).rev() {
            let j1 = (i + m.ku).min(n - 1);
            let row = i * m.width;
            let mut s = b[i];
            for j in i + 1..=j1 {
                s -= m.data[row + (j + m.kl - i)] * b[j];
            }
            b[i] = s / m.data[row + m.kl];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

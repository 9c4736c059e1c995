//! Compressed sparse column matrices and factorizations.
//!
//! Factorizations are delegated to `faer` (AMD-ordered supernodal Cholesky and
//! sparse LU). Every numeric factorization performed on a thread bumps a
//! thread-local event counter, read with [`factorization_events`], so callers
//! can audit that a simulation loop never refactors.

use std::cell::Cell;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Side};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("matrix is singular")]
    Singular,
    #[error("sparse backend failure: {0}")]
    Backend(String),
}

thread_local! {
    static FACTORIZATIONS: Cell<usize> = const { Cell::new(0) };
}

/// Number of numeric factorizations performed so far on the calling thread.
pub fn factorization_events() -> usize {
    FACTORIZATIONS.with(Cell::get)
}

fn record_factorization() {
    FACTORIZATIONS.with(|c| c.set(c.get() + 1));
}

/// Accumulates `(row, col, value)` entries; duplicates are summed on build.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self { n, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> CscMatrix {
        self.entries.sort_unstable_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut col_ptr = vec![0usize; self.n + 1];
        let mut row_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("non-empty") += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..self.n {
            col_ptr[c + 1] += col_ptr[c];
        }
        CscMatrix { n: self.n, col_ptr, row_idx, values }
    }
}

/// Square sparse matrix in compressed-column form.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    pub fn identity(n: usize) -> Self {
        let mut b = TripletBuilder::with_capacity(n, n);
        for i in 0..n {
            b.push(i, i, 1.0);
        }
        b.build()
    }

    pub fn from_diagonal(d: &DVector<f64>) -> Self {
        let mut b = TripletBuilder::with_capacity(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            b.push(i, i, v);
        }
        b.build()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates stored entries as `(row, col, value)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |k| (self.row_idx[k], c, self.values[k]))
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        match self.row_idx[range.clone()].binary_search(&row) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n, "dimension mismatch in sparse product");
        let mut y = DVector::zeros(self.n);
        for c in 0..self.n {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * xc;
            }
        }
        y
    }

    /// `a·self + b·other` over the union of both patterns.
    pub fn linear_combination(&self, a: f64, other: &CscMatrix, b: f64) -> CscMatrix {
        assert_eq!(self.n, other.n);
        let mut t = TripletBuilder::with_capacity(self.n, self.nnz() + other.nnz());
        for (r, c, v) in self.iter() {
            t.push(r, c, a * v);
        }
        for (r, c, v) in other.iter() {
            t.push(r, c, b * v);
        }
        t.build()
    }

    /// Keeps entries for which `keep(row, col)` holds and adds `diag` to the
    /// listed diagonal positions.
    pub fn filtered(&self, keep: impl Fn(usize, usize) -> bool, diag: &[usize]) -> CscMatrix {
        let mut t = TripletBuilder::with_capacity(self.n, self.nnz() + diag.len());
        for (r, c, v) in self.iter() {
            if keep(r, c) {
                t.push(r, c, v);
            }
        }
        for &d in diag {
            t.push(d, d, 1.0);
        }
        t.build()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.iter().map(|(r, c, v)| (v - self.get(c, r)).abs()).fold(0.0, f64::max)
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>, FactorError> {
        let triplets: Vec<_> = self.iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::try_new_from_triplets(self.n, self.n, &triplets)
            .map_err(|e| FactorError::Backend(format!("{e:?}")))
    }
}

fn to_col(b: &DVector<f64>) -> Col<f64> {
    Col::from_fn(b.len(), |i| b[i])
}

fn from_col(x: &Col<f64>) -> DVector<f64> {
    DVector::from_iterator(x.nrows(), (0..x.nrows()).map(|i| x[i]))
}

/// Sparse `L Lᵀ` factorization of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    inner: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl Cholesky {
    pub fn factor(a: &CscMatrix) -> Result<Self, FactorError> {
        let m = a.to_faer()?;
        record_factorization();
        let inner = m.sp_cholesky(Side::Lower).map_err(|e| match e {
            faer::sparse::linalg::LltError::Numeric(_) => FactorError::NotPositiveDefinite,
            other => FactorError::Backend(format!("{other:?}")),
        })?;
        Ok(Self { n: a.dim(), inner })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.n, "dimension mismatch in Cholesky solve");
        from_col(&self.inner.solve(&to_col(b)))
    }
}

/// Sparse LU with partial pivoting, for symmetric indefinite tangents.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    inner: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl Lu {
    pub fn factor(a: &CscMatrix) -> Result<Self, FactorError> {
        let m = a.to_faer()?;
        record_factorization();
        let inner = m.sp_lu().map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { .. } => FactorError::Singular,
            other => FactorError::Backend(format!("{other:?}")),
        })?;
        Ok(Self { n: a.dim(), inner })
    }

    /// Solves `A x = b`; a non-finite result means the matrix was numerically singular.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>, FactorError> {
        assert_eq!(b.len(), self.n, "dimension mismatch in LU solve");
        let x = from_col(&self.inner.solve(&to_col(b)));
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(FactorError::Singular)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> CscMatrix {
        let mut t = TripletBuilder::new(n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
                t.push(i + 1, i, -1.0);
            }
        }
        t.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut t = TripletBuilder::new(2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.5);
        t.push(1, 0, -1.0);
        let m = t.build();
        assert_eq!(m.get(0, 0), 3.5);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn cholesky_matches_dense_solve() {
        let a = laplacian(12);
        let b = DVector::from_fn(12, |i, _| (i as f64).sin() + 0.5);
        let x = Cholesky::factor(&a).unwrap().solve(&b);
        let dense = a.to_dense().lu().solve(&b).unwrap();
        assert!((x - dense).norm() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = laplacian(4).linear_combination(1.0, &CscMatrix::identity(4), -3.0);
        assert_eq!(Cholesky::factor(&a).unwrap_err(), FactorError::NotPositiveDefinite);
    }

    #[test]
    fn lu_handles_indefinite() {
        let a = laplacian(6).linear_combination(1.0, &CscMatrix::identity(6), -1.5);
        let b = DVector::from_element(6, 1.0);
        let x = Lu::factor(&a).unwrap().solve(&b).unwrap();
        assert!((a.mul_vec(&x) - b).norm() < 1e-10);
    }

    #[test]
    fn counter_tracks_factorizations() {
        let before = factorization_events();
        let a = laplacian(3);
        let _ = Cholesky::factor(&a).unwrap();
        let _ = Lu::factor(&a).unwrap();
        assert_eq!(factorization_events() - before, 2);
    }
}

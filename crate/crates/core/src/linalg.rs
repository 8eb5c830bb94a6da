//! Symmetric sparse matrices on a fixed pattern and a reusable Cholesky solver.

use std::sync::Arc;

use nalgebra::DVector;
use nalgebra_sparse::factorization::{CscCholesky, CscSymbolicCholesky};
use nalgebra_sparse::pattern::SparsityPattern;
use nalgebra_sparse::CscMatrix;

use crate::error::{Error, Result};

/// Symmetric matrix with both triangles stored in compressed-column form.
#[derive(Clone, Debug)]
pub struct SymMatrix {
    pub pattern: Arc<SparsityPattern>,
    pub values: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let nnz = pattern.nnz();
        Self {
            pattern,
            values: vec![0.0; nnz],
        }
    }

    pub fn n(&self) -> usize {
        self.pattern.major_dim()
    }

    /// Position of entry `(row, col)` in `values`.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        position(&self.pattern, row, col)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y = vec![0.0; n];
        let off = self.pattern.major_offsets();
        let idx = self.pattern.minor_indices();
        for (c, &xc) in x.iter().enumerate().take(n) {
            for p in off[c]..off[c + 1] {
                y[idx[p]] += self.values[p] * xc;
            }
        }
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.position(i, i).map_or(0.0, |p| self.values[p]))
            .collect()
    }

    pub fn add_diagonal(&mut self, shift: &[f64]) {
        for (i, s) in shift.iter().enumerate() {
            if let Some(p) = self.position(i, i) {
                self.values[p] += s;
            }
        }
    }

    /// `self + s * other`; both matrices must share the pattern.
    pub fn axpy(&self, s: f64, other: &SymMatrix) -> SymMatrix {
        debug_assert!(Arc::ptr_eq(&self.pattern, &other.pattern));
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + s * b)
            .collect();
        SymMatrix {
            pattern: self.pattern.clone(),
            values,
        }
    }

    pub fn to_csc(&self) -> CscMatrix<f64> {
        CscMatrix::try_from_pattern_and_values((*self.pattern).clone(), self.values.clone())
            .expect("pattern and values are consistent")
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        let off = self.pattern.major_offsets();
        let idx = self.pattern.minor_indices();
        for c in 0..n {
            for p in off[c]..off[c + 1] {
                m[(idx[p], c)] = self.values[p];
            }
        }
        m
    }
}

pub fn position(pattern: &SparsityPattern, row: usize, col: usize) -> Option<usize> {
    let off = pattern.major_offsets();
    let rows = &pattern.minor_indices()[off[col]..off[col + 1]];
    rows.binary_search(&row).ok().map(|k| off[col] + k)
}

/// Builds a symmetric pattern from groups of mutually coupled indices.
pub fn pattern_from_groups(n: usize, groups: impl Iterator<Item = Vec<usize>>) -> SparsityPattern {
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
    for g in groups {
        for &c in &g {
            cols[c].extend_from_slice(&g);
        }
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    offsets.push(0);
    for mut c in cols {
        c.sort_unstable();
        c.dedup();
        indices.extend(c);
        offsets.push(indices.len());
    }
    SparsityPattern::try_from_offsets_and_indices(n, n, offsets, indices)
        .expect("sorted unique indices form a valid pattern")
}

/// Cholesky solver that reuses the symbolic analysis across refactorizations.
pub struct CholeskySolver {
    symbolic: CscSymbolicCholesky,
    pattern: Arc<SparsityPattern>,
}

/// A numeric factorization ready for solves.
pub struct Factor {
    chol: CscCholesky<f64>,
}

impl CholeskySolver {
    pub fn new(pattern: Arc<SparsityPattern>) -> Self {
        let symbolic = CscSymbolicCholesky::factor((*pattern).clone());
        Self { symbolic, pattern }
    }

    pub fn factor(&self, m: &SymMatrix) -> Result<Factor> {
        debug_assert!(Arc::ptr_eq(&self.pattern, &m.pattern) || *self.pattern == *m.pattern);
        CscCholesky::factor_numerical(self.symbolic.clone(), &m.values)
            .map(|chol| Factor { chol })
            .map_err(|_| Error::NotPositiveDefinite {
                what: "system matrix",
            })
    }

    /// Factors `m + mu * diag(scale)`, increasing `mu` until the factorization succeeds.
    /// Returns the factor and the shift that was used.
    pub fn factor_shifted(&self, m: &SymMatrix, max_tries: usize) -> Result<(Factor, f64)> {
        if let Ok(f) = self.factor(m) {
            return Ok((f, 0.0));
        }
        let diag = m.diagonal();
        let scale: Vec<f64> = diag.iter().map(|d| d.abs().max(1e-12)).collect();
        let mut mu = 1e-6;
        for _ in 0..max_tries {
            let mut shifted = m.clone();
            shifted.add_diagonal(&scale.iter().map(|s| mu * s).collect::<Vec<_>>());
            if let Ok(f) = self.factor(&shifted) {
                return Ok((f, mu));
            }
            mu *= 10.0;
        }
        Err(Error::NotPositiveDefinite {
            what: "shifted system matrix",
        })
    }
}

impl Factor {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut b = DVector::from_column_slice(rhs);
        self.chol.solve_mut(&mut b);
        b.as_slice().to_vec()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_and_solve_tridiagonal() {
        let n = 6;
        let pat = Arc::new(pattern_from_groups(n, (0..n - 1).map(|i| vec![i, i + 1])));
        let mut m = SymMatrix::zeros(pat.clone());
        for i in 0..n {
            let p = m.position(i, i).unwrap();
            m.values[p] = 2.0;
            if i + 1 < n {
                let a = m.position(i, i + 1).unwrap();
                let b = m.position(i + 1, i).unwrap();
                m.values[a] = -1.0;
                m.values[b] = -1.0;
            }
        }
        let solver = CholeskySolver::new(pat);
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b = m.matvec(&x);
        let sol = solver.factor(&m).unwrap().solve(&b);
        for (a, b) in sol.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
        let neg = m.axpy(-2.0, &m);
        assert!(solver.factor(&neg).is_err());
    }
}

//! Symmetric envelope (skyline) storage and an in-place Cholesky factorization.
//!
//! Row `i` stores the lower-triangle entries from its first nonzero column up to
//! and including the diagonal. Fill-in during Cholesky stays inside the
//! envelope, so the factor reuses the same layout. The concentric-ring node
//! numbering of the disk mesh keeps the envelope narrow.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    /// Zero matrix whose row `i` spans columns `first[i]..=i`.
    pub fn zeros(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        start.push(0);
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "envelope of row {i} starts right of the diagonal");
            start.push(start[i] + i - f + 1);
        }
        let nnz = *start.last().unwrap();
        Self {
            first,
            start,
            values: vec![0.0; nnz],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn first(&self, row: usize) -> usize {
        self.first[row]
    }

    /// Position of entry `(i, j)`, `j <= i`, in the value array.
    pub fn offset(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        (j >= self.first[i]).then(|| self.start[i] + j - self.first[i])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.offset(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[self.start[i]..self.start[i + 1]]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(x.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let f = self.first[i];
            let row = self.row(i);
            let (diag, off) = row.split_last().unwrap();
            let mut acc = diag * x[i];
            for (k, &a) in off.iter().enumerate() {
                acc += a * x[f + k];
                y[f + k] += a * x[i];
            }
            y[i] += acc;
        }
        y
    }

    /// Drops the leading `skip` rows and columns (Dirichlet grounding of the
    /// first nodes).
    pub fn trailing(&self, skip: usize) -> SkylineMatrix {
        let n = self.dim();
        let first: Vec<usize> = (skip..n).map(|i| self.first[i].max(skip) - skip).collect();
        let mut out = SkylineMatrix::zeros(first);
        for i in skip..n {
            let from = self.first[i].max(skip);
            let src = &self.row(i)[from - self.first[i]..];
            let r = i - skip;
            out.values[out.start[r]..out.start[r + 1]].copy_from_slice(src);
        }
        out
    }

    /// Cholesky factor `L` with `A = L Lᵀ`, stored in the same envelope.
    pub fn cholesky(mut self) -> Result<SkylineCholesky> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..i {
                let fj = self.first[j];
                let lo = fi.max(fj);
                let (ri, rj) = (self.start[i], self.start[j]);
                let mut dot = 0.0;
                for k in lo..j {
                    dot += self.values[ri + k - fi] * self.values[rj + k - fj];
                }
                let ljj = self.values[rj + j - fj];
                let idx = ri + j - fi;
                self.values[idx] = (self.values[idx] - dot) / ljj;
            }
            let ri = self.start[i];
            let row = &self.values[ri..ri + i - fi];
            let sq: f64 = row.iter().map(|v| v * v).sum();
            let d = self.values[ri + i - fi] - sq;
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "matrix is not positive definite at pivot {i} (pivot {d:e})"
                )));
            }
            self.values[ri + i - fi] = d.sqrt();
        }
        Ok(SkylineCholesky { factor: self })
    }
}

#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    factor: SkylineMatrix,
}

impl SkylineCholesky {
    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let l = &self.factor;
        let n = l.dim();
        assert_eq!(b.len(), n);
        for i in 0..n {
            let f = l.first[i];
            let row = l.row(i);
            let (diag, off) = row.split_last().unwrap();
            let dot: f64 = off.iter().zip(&b[f..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - dot) / diag;
        }
        for i in (0..n).rev() {
            let f = l.first[i];
            let row = l.row(i);
            let (diag, off) = row.split_last().unwrap();
            b[i] /= diag;
            let xi = b[i];
            for (k, &a) in off.iter().enumerate() {
                b[f + k] -= a * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

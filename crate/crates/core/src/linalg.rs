//! Dense symmetric matrices and their eigendecomposition.
//!
//! The sampler needs `B·D·z`, the conjugate path needs `C^{-1/2}·v`, and the
//! termination layer needs the condition number. A Cholesky factor gives the
//! first but not the second, so everything here is built on a full
//! eigendecomposition computed with cyclic Jacobi rotations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Off-diagonal threshold relative to the norm of the diagonal.
const JACOBI_REL_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Jacobi iteration did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
}

/// An `n × n` symmetric matrix stored row-major.
///
/// Every public mutation writes both `(i, j)` and `(j, i)`, so the stored
/// entries are exactly symmetric at all times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    /// Builds a matrix from row-major entries. The upper triangle is
    /// authoritative; the lower triangle is overwritten with its mirror.
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self, LinalgError> {
        if entries.len() != n * n {
            return Err(LinalgError::DimensionMismatch {
                expected: n * n,
                got: entries.len(),
            });
        }
        if let Some(i) = (0..n).find(|&i| !entries[i * n + i].is_finite()) {
            return Err(LinalgError::NonFinite { row: i, col: i });
        }
        let mut m = Self { n, entries };
        m.enforce_symmetry();
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut entries = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            entries[i * n + i] = d;
        }
        Self { n, entries }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// Sets `(i, j)` and `(j, i)` to `value`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.entries[i * self.n + j] = value;
        self.entries[j * self.n + i] = value;
    }

    /// Row-major view of all `n²` entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Copies the upper triangle onto the lower one.
    pub fn enforce_symmetry(&mut self) {
        let n = self.n;
        for i in 0..n {
            for j in (i + 1)..n {
                self.entries[j * n + i] = self.entries[i * n + j];
            }
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "vector length must match matrix dimension");
        self.entries
            .chunks_exact(self.n)
            .map(|row| dot(row, v))
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Largest absolute entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.n, other.n);
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|a| a.is_finite())
    }

    /// Rebuilds the matrix from its upper triangle, evaluating `f(i, j)` once
    /// per pair `i ≤ j` and mirroring the result.
    pub(crate) fn fill_upper(&mut self, mut f: impl FnMut(usize, usize) -> f64) {
        let n = self.n;
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                self.entries[i * n + j] = v;
                self.entries[j * n + i] = v;
            }
        }
    }
}

/// Eigendecomposition `C = B·diag(d²)·Bᵀ` of a positive definite matrix.
///
/// Columns of `B` are unit eigenvectors; `d` holds the square roots of the
/// eigenvalues in ascending order. Each column is sign-normalized so that its
/// largest-magnitude component is nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    n: usize,
    /// Row-major `n × n`; column `j` is the `j`-th eigenvector.
    basis: Vec<f64>,
    scales: Vec<f64>,
}

impl EigenSystem {
    pub fn identity(n: usize) -> Self {
        let mut basis = vec![0.0; n * n];
        for i in 0..n {
            basis[i * n + i] = 1.0;
        }
        Self {
            n,
            basis,
            scales: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Row-major basis matrix `B`.
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    /// The `j`-th unit eigenvector (column `j` of `B`).
    pub fn axis(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.basis[i * self.n + j]).collect()
    }

    /// Square roots of the eigenvalues, ascending.
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.scales.iter().map(|d| d * d).collect()
    }

    /// `B·v`.
    pub fn rotate(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n);
        self.basis
            .chunks_exact(self.n)
            .map(|row| dot(row, v))
            .collect()
    }

    /// `Bᵀ·v`.
    pub fn rotate_back(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n);
        let n = self.n;
        let mut out = vec![0.0; n];
        for (i, &vi) in v.iter().enumerate() {
            let row = &self.basis[i * n..(i + 1) * n];
            for (o, &b) in out.iter_mut().zip(row) {
                *o += b * vi;
            }
        }
        out
    }

    /// `B·D·z`, which maps `z ~ N(0, I)` to `y ~ N(0, C)`.
    pub fn transform(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.n);
        let scaled: Vec<f64> = z.iter().zip(&self.scales).map(|(z, d)| z * d).collect();
        self.rotate(&scaled)
    }

    /// `C^{-1/2}·v = B·D⁻¹·Bᵀ·v`, without forming the matrix.
    pub fn inv_sqrt_apply(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if v.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                expected: self.n,
                got: v.len(),
            });
        }
        let mut coords = self.rotate_back(v);
        for (c, d) in coords.iter_mut().zip(&self.scales) {
            *c /= d;
        }
        Ok(self.rotate(&coords))
    }

    /// Ratio of the largest to the smallest eigenvalue.
    pub fn condition_number(&self) -> f64 {
        let max = self.max_scale();
        let min = self.min_scale();
        (max * max) / (min * min)
    }

    pub fn min_scale(&self) -> f64 {
        self.scales.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_scale(&self) -> f64 {
        self.scales.iter().copied().fold(0.0, f64::max)
    }

    /// `B·diag(d²)·Bᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.n;
        let eig = self.eigenvalues();
        let mut m = SymMatrix::identity(n);
        m.fill_upper(|i, j| {
            (0..n)
                .map(|k| self.basis[i * n + k] * eig[k] * self.basis[j * n + k])
                .sum()
        });
        m
    }

    /// `max |BᵀB − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                let s: f64 = (0..n)
                    .map(|i| self.basis[i * n + a] * self.basis[i * n + b])
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }
}

/// Decomposes a symmetric positive definite matrix with cyclic Jacobi sweeps.
///
/// The input is re-symmetrized from its upper triangle first. Iteration stops
/// once the largest off-diagonal magnitude is at most `1e-14 · ‖diag‖₂`.
pub fn eigendecompose(c: &SymMatrix) -> Result<EigenSystem, LinalgError> {
    let n = c.dim();
    for i in 0..n {
        for j in i..n {
            if !c.get(i, j).is_finite() {
                return Err(LinalgError::NonFinite { row: i, col: j });
            }
        }
    }

    let mut a = c.clone();
    a.enforce_symmetry();
    let mut a = a.entries;
    let mut v = EigenSystem::identity(n).basis;

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let diag_norm = (0..n).map(|i| a[i * n + i].powi(2)).sum::<f64>().sqrt();
        let mut max_off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                max_off = max_off.max(a[p * n + q].abs());
            }
        }
        if max_off <= JACOBI_REL_TOL * diag_norm {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate_pair(&mut a, &mut v, n, p, q);
            }
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));

    let mut basis = vec![0.0; n * n];
    let mut scales = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        let lambda = a[src * n + src];
        if !lambda.is_finite() {
            return Err(LinalgError::NonFinite { row: src, col: src });
        }
        if lambda <= 0.0 {
            return Err(LinalgError::NotPositiveDefinite {
                min_eigenvalue: a[order[0] * n + order[0]],
            });
        }
        scales.push(lambda.sqrt());

        // Sign convention: the first largest-magnitude component is >= 0.
        let mut lead = 0;
        for i in 1..n {
            if v[i * n + src].abs() > v[lead * n + src].abs() {
                lead = i;
            }
        }
        let sign = if v[lead * n + src] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            basis[i * n + col] = sign * v[i * n + src];
        }
    }

    Ok(EigenSystem { n, basis, scales })
}

/// One Jacobi rotation annihilating `a[p][q]`, accumulated into `v`.
fn rotate_pair(a: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = a[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = a[p * n + p];
    let aqq = a[q * n + q];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    a[p * n + p] = app - t * apq;
    a[q * n + q] = aqq + t * apq;
    a[p * n + q] = 0.0;
    a[q * n + p] = 0.0;
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = a[r * n + p];
        let arq = a[r * n + q];
        let new_rp = c * arp - s * arq;
        let new_rq = s * arp + c * arq;
        a[r * n + p] = new_rp;
        a[p * n + r] = new_rp;
        a[r * n + q] = new_rq;
        a[q * n + r] = new_rq;
    }
    for r in 0..n {
        let vrp = v[r * n + p];
        let vrq = v[r * n + q];
        v[r * n + p] = c * vrp - s * vrq;
        v[r * n + q] = s * vrp + c * vrq;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

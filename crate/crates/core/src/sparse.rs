//! Sparse symmetric positive definite systems.
//!
//! Matrices are stored as their lower triangle, row by row, holding only the
//! structurally nonzero entries. Factorization reorders with reverse
//! Cuthill-McKee and then runs an envelope (profile) Cholesky, whose storage
//! is exactly the profile of the reordered matrix. When that profile would
//! exceed a memory cap, solves fall back to Jacobi-preconditioned conjugate
//! gradients.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Lower triangle of a symmetric matrix, including the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    /// `rows[i]`: `(j, value)` with `j <= i`, sorted by `j`, last entry the diagonal.
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSym {
    /// Builds from lower-triangle rows. Each row must be sorted by column and
    /// end with its diagonal entry.
    pub fn from_lower_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        for (i, r) in rows.iter().enumerate() {
            debug_assert!(r.last().is_some_and(|&(j, _)| j == i), "row {i} lacks its diagonal");
            debug_assert!(r.windows(2).all(|w| w[0].0 < w[1].0));
        }
        Self { n: rows.len(), rows }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// Stored entries of the full symmetric matrix.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| 2 * r.len() - 1).sum()
    }

    /// Fraction of off-diagonal entries that are structurally zero.
    pub fn offdiag_zero_fraction(&self) -> f64 {
        if self.n < 2 {
            return 1.0;
        }
        let off = (self.nnz() - self.n) as f64;
        1.0 - off / (self.n * (self.n - 1)) as f64
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.last().unwrap().1).collect()
    }

    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (r, v) in self.rows.iter_mut().zip(d) {
            r.last_mut().unwrap().1 += v;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                y[i] += v * x[j];
                if j != i {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, _) in r {
                if j != i {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        adj
    }
}

/// Reverse Cuthill-McKee ordering; `perm[new] = old`.
pub fn rcm_order(a: &SparseSym) -> Vec<usize> {
    let adj = a.adjacency();
    let n = a.dim();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    // Breadth-first level structure from `root`; returns (eccentricity, last level).
    let levels = |root: usize| -> (usize, Vec<usize>) {
        let mut depth = vec![usize::MAX; n];
        depth[root] = 0;
        let mut q = VecDeque::from([root]);
        let mut last = vec![root];
        let mut ecc = 0;
        while let Some(v) = q.pop_front() {
            for &w in &adj[v] {
                if depth[w] == usize::MAX {
                    depth[w] = depth[v] + 1;
                    if depth[w] > ecc {
                        ecc = depth[w];
                        last.clear();
                    }
                    if depth[w] == ecc {
                        last.push(w);
                    }
                    q.push_back(w);
                }
            }
        }
        (ecc, last)
    };

    while order.len() < n {
        // Lowest-degree unvisited vertex, then walk towards a pseudo-peripheral one.
        let mut root = (0..n).filter(|&v| !visited[v]).min_by_key(|&v| degree[v]).unwrap();
        let (mut ecc, mut last) = levels(root);
        loop {
            let cand = *last.iter().min_by_key(|&&v| degree[v]).unwrap();
            let (e, l) = levels(cand);
            if e > ecc {
                root = cand;
                ecc = e;
                last = l;
            } else {
                break;
            }
        }
        let start = order.len();
        visited[root] = true;
        order.push(root);
        let mut head = start;
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                order.push(w);
            }
        }
    }
    order.reverse();
    order
}

fn permute(a: &SparseSym, perm: &[usize]) -> SparseSym {
    let n = a.dim();
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut rows = vec![Vec::new(); n];
    for (i, r) in a.rows.iter().enumerate() {
        for &(j, v) in r {
            let (pi, pj) = (inv[i], inv[j]);
            let (hi, lo) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            rows[hi].push((lo, v));
        }
    }
    for r in &mut rows {
        r.sort_by_key(|e| e.0);
    }
    SparseSym { n, rows }
}

/// Profile size (stored entries of the envelope factor) under ordering `perm`.
pub fn envelope_size(a: &SparseSym, perm: &[usize]) -> usize {
    let p = permute(a, perm);
    p.rows.iter().enumerate().map(|(i, r)| i - r[0].0 + 1).sum()
}

/// Cholesky factor `L` of `P A P^T` stored over the envelope of each row.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    /// First stored column of each row.
    first: Vec<usize>,
    /// Row `i` holds columns `first[i]..=i` at `start[i]..start[i + 1]`.
    start: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factorizes with the given ordering; `None` if the matrix is not
    /// numerically positive definite.
    pub fn factor(a: &SparseSym, perm: Vec<usize>) -> Option<Self> {
        let p = permute(a, &perm);
        let n = p.n;
        let first: Vec<usize> = p.rows.iter().map(|r| r[0].0).collect();
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + i - first[i] + 1);
        }
        let mut values = vec![0.0; start[n]];
        for (i, r) in p.rows.iter().enumerate() {
            for &(j, v) in r {
                values[start[i] + j - first[i]] = v;
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut s = values[start[i] + j - fi];
                let ri = start[i] + lo - fi;
                let rj = start[j] + lo - fj;
                for k in 0..(j - lo) {
                    s -= values[ri + k] * values[rj + k];
                }
                if j < i {
                    values[start[i] + j - fi] = s / values[start[j] + j - fj];
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    values[start[i] + i - fi] = s.sqrt();
                }
            }
        }
        Some(Self { perm, first, start, values })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    fn diag(&self, i: usize) -> f64 {
        self.values[self.start[i + 1] - 1]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    /// `L^{-1} P b`, skipping the leading zeros of the permuted right-hand side.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        let Some(lead) = y.iter().position(|&v| v != 0.0) else {
            return y;
        };
        for i in lead..n {
            let fi = self.first[i];
            let lo = fi.max(lead);
            let row = &self.values[self.start[i] + lo - fi..self.start[i + 1] - 1];
            let s: f64 = row.iter().zip(&y[lo..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / self.diag(i);
        }
        y
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = self.forward(b);
        for i in (0..n).rev() {
            y[i] /= self.diag(i);
            let xi = y[i];
            let fi = self.first[i];
            for (k, l) in (fi..i).zip(&self.values[self.start[i]..self.start[i + 1] - 1]) {
                y[k] -= l * xi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// `b^T A^{-1} b`.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        self.forward(b).iter().map(|v| v * v).sum()
    }
}

/// Relative residual target for the iterative fallback.
pub const CG_TOL: f64 = 1e-10;

/// Jacobi-preconditioned conjugate gradients.
pub fn conjugate_gradient(a: &SparseSym, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    let dinv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..max_iter {
        let ap = a.mul_vec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Factorization);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Factorization)
}

/// Solver for a fixed sparse SPD matrix.
#[derive(Debug, Clone)]
pub enum SparseSolver {
    Factor(EnvelopeCholesky),
    Iterative(SparseSym),
}

impl SparseSolver {
    /// Factorizes when the envelope fits in `max_entries`, otherwise keeps the
    /// matrix for iterative solves. `None` if factorization breaks down.
    pub fn new(a: &SparseSym, max_entries: usize) -> Option<Self> {
        let perm = rcm_order(a);
        if envelope_size(a, &perm) > max_entries {
            return Some(SparseSolver::Iterative(a.clone()));
        }
        EnvelopeCholesky::factor(a, perm).map(SparseSolver::Factor)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            SparseSolver::Factor(f) => Ok(f.solve(b)),
            SparseSolver::Iterative(a) => conjugate_gradient(a, b, CG_TOL, 10 * a.dim() + 100),
        }
    }

    pub fn quad_form(&self, b: &[f64]) -> Result<f64> {
        match self {
            SparseSolver::Factor(f) => Ok(f.quad_form(b)),
            SparseSolver::Iterative(_) => {
                let x = self.solve(b)?;
                Ok(x.iter().zip(b).map(|(x, b)| x * b).sum())
            }
        }
    }

    /// Only available from a factorization.
    pub fn log_det(&self) -> Option<f64> {
        match self {
            SparseSolver::Factor(f) => Some(f.log_det()),
            SparseSolver::Iterative(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Banded SPD test matrix with a scrambled labelling.
    fn scrambled_band(n: usize, scramble: u64) -> SparseSym {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (i as u64).wrapping_mul(2_654_435_761).wrapping_add(scramble) % 1_000_003);
        let mut label = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            label[old] = new;
        }
        let mut rows = vec![Vec::new(); n];
        for i in 0..n {
            for j in i.saturating_sub(2)..=i {
                let v = if i == j { 4.0 } else { -1.0 + 0.1 * (i - j) as f64 };
                let (a, b) = (label[i], label[j]);
                let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
                rows[hi].push((lo, v));
            }
        }
        for r in &mut rows {
            r.sort_by_key(|e| e.0);
        }
        SparseSym::from_lower_rows(rows)
    }

    #[test]
    fn rcm_is_a_permutation_and_shrinks_profile() {
        let a = scrambled_band(60, 7);
        let perm = rcm_order(&a);
        let mut sorted = perm.clone();
        sorted.sort();
        assert_eq!(sorted, (0..60).collect::<Vec<_>>());
        let identity: Vec<usize> = (0..60).collect();
        assert!(envelope_size(&a, &perm) < envelope_size(&a, &identity));
        assert!(envelope_size(&a, &perm) <= 60 * 3);
    }

    #[test]
    fn envelope_factor_matches_dense() {
        let a = scrambled_band(40, 11);
        let f = EnvelopeCholesky::factor(&a, rcm_order(&a)).unwrap();
        let dense = a.to_dense().cholesky().unwrap();
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = f.solve(&b);
        let xd = dense.solve(&nalgebra::DVector::from_vec(b.clone()));
        for i in 0..40 {
            assert!((x[i] - xd[i]).abs() < 1e-12);
        }
        let ld: f64 = 2.0 * dense.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        assert!((f.log_det() - ld).abs() < 1e-10);
        let q: f64 = x.iter().zip(&b).map(|(x, b)| x * b).sum();
        assert!((f.quad_form(&b) - q).abs() < 1e-12);
    }

    #[test]
    fn iterative_fallback_agrees() {
        let a = scrambled_band(50, 13);
        let b: Vec<f64> = (0..50).map(|i| 1.0 + i as f64).collect();
        let direct = SparseSolver::new(&a, usize::MAX).unwrap();
        let iter = SparseSolver::new(&a, 10).unwrap();
        assert!(matches!(iter, SparseSolver::Iterative(_)));
        assert!(iter.log_det().is_none());
        let x1 = direct.solve(&b).unwrap();
        let x2 = iter.solve(&b).unwrap();
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = SparseSym::from_lower_rows(vec![vec![(0, 1.0)], vec![(0, 2.0), (1, 1.0)]]);
        assert!(EnvelopeCholesky::factor(&a, vec![0, 1]).is_none());
    }

    #[test]
    fn forward_solve_skips_leading_zeros() {
        let a = scrambled_band(30, 7);
        let f = EnvelopeCholesky::factor(&a, rcm_order(&a)).unwrap();
        let mut b = vec![0.0; 30];
        b[5] = 1.0;
        let q = f.quad_form(&b);
        let x = f.solve(&b);
        assert!((q - x[5]).abs() < 1e-12);
        assert_eq!(f.quad_form(&[0.0; 30]), 0.0);
    }

    proptest! {
        #[test]
        fn mul_vec_matches_dense(n in 2usize..25, s in 1u64..20, seed in 0u64..1000) {
            let a = scrambled_band(n, s * 2 + 1);
            let x: Vec<f64> = (0..n).map(|i| ((i as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
            let y = a.mul_vec(&x);
            let yd = a.to_dense() * nalgebra::DVector::from_vec(x);
            for i in 0..n {
                prop_assert!((y[i] - yd[i]).abs() < 1e-12);
            }
        }
    }
}

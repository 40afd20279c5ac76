//! Sparse symmetric positive-definite solvers.

use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::grid::operators::apply;

/// Method used for an SPD solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Banded Cholesky for small grids, preconditioned CG otherwise.
    #[default]
    Auto,
    ConjugateGradient,
    BandedCholesky,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub method: LinearSolver,
    /// Relative residual target `‖b − Ax‖ / ‖b‖`.
    pub tol: f64,
    /// Iteration cap for CG; defaults to `10·N`.
    pub max_iter: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { method: LinearSolver::Auto, tol: 1e-10, max_iter: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `A x = b` for a symmetric positive-definite CSR matrix.
///
/// `Auto` must be resolved by the caller; it is treated as CG here.
pub fn solve_spd(
    a: &CsMat<f64>,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveInfo)> {
    if a.rows() != a.cols() || a.rows() != b.len() {
        return Err(Error::Dimension { expected: a.rows(), found: b.len() });
    }
    match opts.method {
        LinearSolver::BandedCholesky => {
            let x = BandedCholesky::factor(a)?.solve(b);
            let residual = relative_residual(a, &x, b);
            Ok((x, SolveInfo { iterations: 1, residual }))
        }
        LinearSolver::ConjugateGradient | LinearSolver::Auto => {
            let max_iter = opts.max_iter.unwrap_or(10 * a.rows().max(1));
            conjugate_gradient(a, b, x0, opts.tol, max_iter)
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn relative_residual(a: &CsMat<f64>, x: &[f64], b: &[f64]) -> f64 {
    let ax = apply(a, x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, y)| b - y).collect();
    let bn = norm(b);
    if bn == 0.0 {
        norm(&r)
    } else {
        norm(&r) / bn
    }
}

/// Jacobi-preconditioned conjugate gradients.
pub fn conjugate_gradient(
    a: &CsMat<f64>,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveInfo)> {
    let n = b.len();
    let bn = norm(b);
    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    if bn == 0.0 {
        return Ok((vec![0.0; n], SolveInfo { iterations: 0, residual: 0.0 }));
    }
    let mut diag = vec![1.0; n];
    for (i, row) in a.outer_iterator().enumerate() {
        if let Some(&d) = row.get(i) {
            if d <= 0.0 {
                return Err(Error::Assembly(format!("non-positive diagonal {d:e} at row {i}")));
            }
            diag[i] = d;
        }
    }
    let ax = apply(a, &x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, y)| b - y).collect();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = norm(&r) / bn;
    let mut it = 0;
    while res > tol {
        if it >= max_iter {
            return Err(Error::SolverDivergence { iterations: it, residual: res });
        }
        let ap = apply(a, &p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Assembly("operator is not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = norm(&r) / bn;
        it += 1;
    }
    // Report the true residual, not the recurrence estimate.
    let residual = relative_residual(a, &x, b);
    Ok((x, SolveInfo { iterations: it, residual }))
}

/// Cholesky factor of a banded SPD matrix, stored row by row over the band.
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsMat<f64>) -> Result<Self> {
        let n = a.rows();
        let mut bw = 0;
        for (i, row) in a.outer_iterator().enumerate() {
            for (j, _) in row.iter() {
                bw = bw.max(i.abs_diff(j));
            }
        }
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for (i, row) in a.outer_iterator().enumerate() {
            for (j, &v) in row.iter() {
                if j <= i {
                    l[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = l[i * w + (j + bw - i)];
                for k in klo..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Assembly(format!(
                            "matrix is not positive definite (pivot {s:e} at row {i})"
                        )));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (k + bw - i)] * y[k];
            }
            y[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= self.l[k * w + (i + bw - k)] * y[k];
            }
            y[i] = s / self.l[i * w + bw];
        }
        y
    }
}

/// Replaces row and column `idx` by the identity, fixing `x[idx] = 0`.
pub fn pin(a: &CsMat<f64>, b: &mut [f64], idx: usize) -> CsMat<f64> {
    let mut tri = TriMat::with_capacity((a.rows(), a.cols()), a.nnz());
    for (i, row) in a.outer_iterator().enumerate() {
        for (j, &v) in row.iter() {
            if i != idx && j != idx {
                tri.add_triplet(i, j, v);
            }
        }
    }
    tri.add_triplet(idx, idx, 1.0);
    b[idx] = 0.0;
    tri.to_csr()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsMat<f64> {
        let mut tri = TriMat::new((n, n));
        for i in 0..n {
            tri.add_triplet(i, i, 2.0 + 0.1 * i as f64);
            if i + 1 < n {
                tri.add_triplet(i, i + 1, -1.0);
                tri.add_triplet(i + 1, i, -1.0);
            }
        }
        tri.to_csr()
    }

    #[test]
    fn solvers_agree() {
        let a = laplacian_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).cos()).collect();
        let opts = SolveOptions { method: LinearSolver::ConjugateGradient, ..Default::default() };
        let (x1, info) = solve_spd(&a, &b, None, &opts).unwrap();
        assert!(info.residual <= 1e-10);
        let opts = SolveOptions { method: LinearSolver::BandedCholesky, ..Default::default() };
        let (x2, info) = solve_spd(&a, &b, None, &opts).unwrap();
        assert!(info.residual <= 1e-13);
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut tri = TriMat::new((2, 2));
        tri.add_triplet(0, 0, 1.0);
        tri.add_triplet(0, 1, 2.0);
        tri.add_triplet(1, 0, 2.0);
        tri.add_triplet(1, 1, 1.0);
        assert!(matches!(BandedCholesky::factor(&tri.to_csr()), Err(Error::Assembly(_))));
    }

    #[test]
    fn cg_reports_divergence() {
        let a = laplacian_1d(200);
        let b = vec![1.0; 200];
        let r = conjugate_gradient(&a, &b, None, 1e-14, 3);
        assert!(matches!(r, Err(Error::SolverDivergence { iterations: 3, .. })));
    }

    #[test]
    fn pinning_keeps_symmetry() {
        let a = laplacian_1d(5);
        let mut b = vec![1.0; 5];
        let p = pin(&a, &mut b, 0);
        assert_eq!(b[0], 0.0);
        let d = p.to_dense();
        assert_eq!(d[[0, 0]], 1.0);
        assert_eq!(d[[0, 1]], 0.0);
        assert_eq!(d[[1, 0]], 0.0);
    }
}

//! Sparse matrix forms of the grid difference operators.
//!
//! Vector fields are flattened node by node, so component `k` of node `a`
//! sits at index `a·dim + k`.

use sprs::{CsMat, TriMat};

use super::Grid;
use crate::error::{Error, Result};

/// Difference stencil used for nodal gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientScheme {
    /// Forward differences, backward where the forward neighbour is missing.
    /// First-order; exactly compatible with the curl penalty.
    Forward,
    /// Central differences with second-order one-sided closures at the boundary.
    #[default]
    Central,
}

/// `(N·dim) × N` matrix mapping nodal values to nodal gradients.
pub fn gradient_matrix(grid: &Grid, scheme: GradientScheme) -> CsMat<f64> {
    let n = grid.len();
    let d = grid.dim();
    let mut tri = TriMat::with_capacity((n * d, n), 3 * n * d);
    for a in 0..n {
        for k in 0..d {
            let row = a * d + k;
            let h = grid.spacing()[k];
            for (col, coef) in stencil(grid, a, k, scheme) {
                tri.add_triplet(row, col, coef / h);
            }
        }
    }
    tri.to_csr()
}

/// Stencil (node, coefficient·Δ) for the derivative along `axis` at node `a`.
pub(crate) fn stencil(
    grid: &Grid,
    a: usize,
    axis: usize,
    scheme: GradientScheme,
) -> Vec<(usize, f64)> {
    let fwd = grid.neighbor(a, axis, 1);
    let bwd = grid.neighbor(a, axis, -1);
    match scheme {
        GradientScheme::Forward => match (fwd, bwd) {
            (Some(f), _) => vec![(a, -1.0), (f, 1.0)],
            (None, Some(b)) => vec![(b, -1.0), (a, 1.0)],
            (None, None) => Vec::new(),
        },
        GradientScheme::Central => match (fwd, bwd) {
            (Some(f), Some(b)) => vec![(b, -0.5), (f, 0.5)],
            (Some(f), None) => match grid.neighbor(a, axis, 2) {
                Some(ff) => vec![(a, -1.5), (f, 2.0), (ff, -0.5)],
                None => vec![(a, -1.0), (f, 1.0)],
            },
            (None, Some(b)) => match grid.neighbor(a, axis, -2) {
                Some(bb) => vec![(bb, 0.5), (b, -2.0), (a, 1.5)],
                None => vec![(b, -1.0), (a, 1.0)],
            },
            (None, None) => Vec::new(),
        },
    }
}

/// Nodes `(i, j)` whose cell `(i..=i+1) × (j..=j+1)` lies entirely in the domain,
/// returned with the active indices of `(i+1, j)`, `(i, j+1)` and `(i+1, j+1)`.
pub(crate) fn full_cells(grid: &Grid) -> Vec<[usize; 4]> {
    if grid.dim() != 2 {
        return Vec::new();
    }
    (0..grid.len())
        .filter_map(|a| {
            let e1 = grid.neighbor(a, 0, 1)?;
            let e2 = grid.neighbor(a, 1, 1)?;
            let e12 = grid.neighbor(e1, 1, 1)?;
            Some([a, e1, e2, e12])
        })
        .collect()
}

/// Discrete curl penalty `Q` (`N × 2N`).
///
/// The row of node `(i, j)` is `v1(i,j+1) − v1(i,j) − v2(i+1,j) + v2(i,j)`
/// when the whole cell is in the domain and empty otherwise. For unequal
/// spacings the `v1` and `v2` entries are scaled by `√(Δ1/Δ2)` and `√(Δ2/Δ1)`
/// so that `Q` still annihilates every forward-difference gradient.
pub fn curl_penalty(grid: &Grid) -> Result<CsMat<f64>> {
    if grid.dim() != 2 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    let n = grid.len();
    let [h1, h2] = grid.spacing();
    let s1 = (h1 / h2).sqrt();
    let s2 = (h2 / h1).sqrt();
    let mut tri = TriMat::with_capacity((n, 2 * n), 4 * n);
    for [a, e1, e2, _] in full_cells(grid) {
        tri.add_triplet(a, 2 * a, -s1);
        tri.add_triplet(a, 2 * a + 1, s2);
        tri.add_triplet(a, 2 * e2, s1);
        tri.add_triplet(a, 2 * e1 + 1, -s2);
    }
    Ok(tri.to_csr())
}

/// Sparse matrix–vector product.
pub fn apply(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.rows()];
    for (row, vec) in m.outer_iterator().enumerate() {
        y[row] = vec.iter().map(|(col, v)| v * x[col]).sum();
    }
    y
}

/// `mᵀ x` for a CSR matrix.
pub fn apply_transpose(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.cols()];
    for (row, vec) in m.outer_iterator().enumerate() {
        let xr = x[row];
        if xr != 0.0 {
            for (col, v) in vec.iter() {
                y[col] += v * xr;
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScalarField;

    #[test]
    fn central_scheme_exact_on_quadratics() {
        let g = Grid::unit_square(9).unwrap();
        let s = ScalarField::from_fn(&g, |x| x[0] * x[0] - 3.0 * x[0] * x[1] + 2.0 * x[1] * x[1]);
        let grad = apply(&gradient_matrix(&g, GradientScheme::Central), s.values());
        for (a, x) in g.points().enumerate() {
            assert!((grad[2 * a] - (2.0 * x[0] - 3.0 * x[1])).abs() < 1e-12);
            assert!((grad[2 * a + 1] - (-3.0 * x[0] + 4.0 * x[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_grid_has_one_penalty_row() {
        let g = Grid::unit_square(2).unwrap();
        let q = curl_penalty(&g).unwrap();
        let rows: Vec<_> = q.outer_iterator().filter(|r| r.nnz() > 0).collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].nnz(), 4);
    }

    #[test]
    fn penalty_needs_two_dimensions() {
        let g = Grid::interval(0.0, 1.0, 5).unwrap();
        assert!(matches!(curl_penalty(&g), Err(Error::UnsupportedDimension(1))));
    }

    #[test]
    fn transpose_product_matches_dense() {
        let g = Grid::unit_square(4).unwrap();
        let m = gradient_matrix(&g, GradientScheme::Forward);
        let x: Vec<f64> = (0..m.rows()).map(|i| (i as f64).sin()).collect();
        let y = apply_transpose(&m, &x);
        let dense = m.to_dense();
        for c in 0..m.cols() {
            let expect: f64 = (0..m.rows()).map(|r| dense[[r, c]] * x[r]).sum();
            assert!((y[c] - expect).abs() < 1e-12);
        }
    }
}

use super::operators::{apply, gradient_matrix, GradientScheme};
use super::{ensure_same, Grid, ScalarField, VectorField};
use crate::error::{Error, Result};

/// Forward-difference gradient, backward where the forward neighbour is missing.
pub fn gradient(s: &ScalarField) -> VectorField {
    let g = s.grid();
    let values = apply(&gradient_matrix(g, GradientScheme::Forward), s.values());
    VectorField::new(g.clone(), values).expect("gradient has grid shape")
}

/// Backward-difference divergence, forward where the backward neighbour is missing.
pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid();
    let d = g.dim();
    let values = (0..g.len())
        .map(|a| {
            (0..d)
                .map(|k| {
                    let h = g.spacing()[k];
                    match (g.neighbor(a, k, -1), g.neighbor(a, k, 1)) {
                        (Some(b), _) => (v.at(a)[k] - v.at(b)[k]) / h,
                        (None, Some(f)) => (v.at(f)[k] - v.at(a)[k]) / h,
                        (None, None) => 0.0,
                    }
                })
                .sum()
        })
        .collect();
    ScalarField::new(g.clone(), values).expect("divergence has grid shape")
}

/// Forward-difference `∂v2/∂x1 − ∂v1/∂x2`, zero on nodes whose forward cell
/// leaves the domain.
pub fn curl2d(v: &VectorField) -> Result<ScalarField> {
    let g = v.grid();
    if g.dim() != 2 {
        return Err(Error::UnsupportedDimension(g.dim()));
    }
    let [h1, h2] = g.spacing();
    let mut values = vec![0.0; g.len()];
    for [a, e1, e2, _] in super::operators::full_cells(g) {
        values[a] = (v.at(e1)[1] - v.at(a)[1]) / h1 - (v.at(e2)[0] - v.at(a)[0]) / h2;
    }
    ScalarField::new(g.clone(), values)
}

/// `v(x)·n(x)·f(x)` at each boundary node, in the order of [`Grid::boundary_nodes`].
pub fn boundary_flux(v: &VectorField, f: &ScalarField) -> Result<Vec<f64>> {
    ensure_same(v.grid(), f.grid())?;
    let g = v.grid();
    Ok(g.boundary_nodes()
        .iter()
        .map(|&a| {
            let n = g.normal(a).expect("boundary node has a normal");
            let vn: f64 = v.at(a).iter().zip(n).map(|(x, y)| x * y).sum();
            vn * f.values()[a]
        })
        .collect())
}

/// Quadrature of a scalar field with the grid's node weights.
pub fn integrate(s: &ScalarField) -> f64 {
    s.values().iter().zip(s.grid().weights()).map(|(v, w)| v * w).sum()
}

/// `∫ a·b f`.
pub fn inner_product(a: &VectorField, b: &VectorField, f: &ScalarField) -> Result<f64> {
    ensure_same(a.grid(), b.grid())?;
    ensure_same(a.grid(), f.grid())?;
    Ok(weighted_dot(a.grid(), a.values(), b.values(), f.values()))
}

/// `‖a‖_f = √⟨a, a⟩_f`.
pub fn norm_f(a: &VectorField, f: &ScalarField) -> Result<f64> {
    inner_product(a, a, f).map(f64::sqrt)
}

pub(crate) fn weighted_dot(g: &Grid, a: &[f64], b: &[f64], f: &[f64]) -> f64 {
    let d = g.dim();
    g.weights()
        .iter()
        .enumerate()
        .map(|(p, w)| {
            let dot: f64 = (0..d).map(|k| a[p * d + k] * b[p * d + k]).sum();
            w * f[p] * dot
        })
        .sum()
}

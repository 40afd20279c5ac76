//! Grid decomposition of a technological change `Ȧ` into an earnings gradient
//! `v = ∇ẇ` and a reallocation `ṙ = C⁻¹(Ȧ − v)`.
//!
//! Two solvers are provided:
//!
//! * [`gradient_regression`] minimizes the `C_f`-weighted distance between
//!   `Ȧ` and a curl-free field, with curl-freeness imposed by a penalty
//!   `Ψ‖Qz‖²` on forward-difference circulations. The penalized field is then
//!   refit onto forward-difference gradients.
//! * [`solve_poisson_direct`] solves the weak form of
//!   `ḟ + ∇·(C_f∇ẇ) = ∇·(C_f Ȧ)` with the natural flux condition
//!   `(C_f(Ȧ − ∇ẇ))·n = 0`, i.e. the weighted least-squares problem over
//!   nodal gradients, optionally with a density change `ḟ`.
//!
//! Here `C_f = f·C⁻¹`. The reallocation is always computed residually, so
//! `Ȧ = v + C·ṙ` holds to rounding and all discretization error shows up in
//! the feasibility diagnostics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::grid::operators::{apply, apply_transpose, curl_penalty, gradient_matrix, GradientScheme};
use crate::grid::{self, ensure_same, Grid, MatrixField, ScalarField, VectorField};
use crate::linalg::{self, LinearSolver, SolveInfo, SolveOptions};

/// Densities are floored at this fraction of their maximum.
pub const DENSITY_FLOOR: f64 = 1e-8;

/// Largest lattice side for which `LinearSolver::Auto` picks a direct factorization.
pub const DIRECT_FACTOR_MAX_N: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Penalized,
    #[default]
    Direct,
}

/// Quadratic form used by the penalized solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PenaltyForm {
    /// `(B + ΨQᵀQ) z = B z_Ȧ`.
    #[default]
    Quadratic,
    /// `(B² + ΨQᵀQ) z = B² z_Ȧ`.
    Squared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub solver: Solver,
    /// Curl penalty; defaults to [`default_psi`].
    pub psi: Option<f64>,
    pub penalty_form: PenaltyForm,
    /// Gradient stencil of the direct solver.
    pub scheme: GradientScheme,
    pub linear: SolveOptions,
    /// Starting point for the primary linear solve (CG only).
    pub initial_guess: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            solver: Solver::Direct,
            psi: None,
            penalty_form: PenaltyForm::Quadratic,
            scheme: GradientScheme::Central,
            linear: SolveOptions::default(),
            initial_guess: None,
        }
    }
}

impl SolverOptions {
    pub fn penalized() -> Self {
        Self { solver: Solver::Penalized, ..Self::default() }
    }

    pub fn direct() -> Self {
        Self::default()
    }
}

/// Validated inputs of a decomposition.
#[derive(Debug, Clone)]
pub struct DecompositionInput {
    density: ScalarField,
    complementarity: MatrixField,
    tech_change: VectorField,
    density_change: Option<ScalarField>,
}

impl DecompositionInput {
    /// Floors and renormalizes the density and checks that all fields share a grid.
    pub fn new(density: ScalarField, complementarity: MatrixField, tech_change: VectorField) -> Result<Self> {
        ensure_same(density.grid(), complementarity.grid())?;
        ensure_same(density.grid(), tech_change.grid())?;
        let complementarity = if complementarity.is_spd() {
            complementarity
        } else {
            MatrixField::new_spd(complementarity.grid().clone(), complementarity.values().to_vec())?
        };
        if tech_change.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("technological change is not finite".into()));
        }
        Ok(Self { density: normalize_density(&density)?, complementarity, tech_change, density_change: None })
    }

    /// Adds a density change, which must integrate to zero.
    pub fn with_density_change(mut self, fdot: ScalarField) -> Result<Self> {
        ensure_same(self.density.grid(), fdot.grid())?;
        if fdot.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("density change is not finite".into()));
        }
        let integral = grid::integrate(&fdot);
        if integral.abs() > 1e-8 {
            return Err(Error::Compatibility { integral });
        }
        self.density_change = Some(fdot);
        Ok(self)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.density.grid()
    }

    pub fn density(&self) -> &ScalarField {
        &self.density
    }

    pub fn complementarity(&self) -> &MatrixField {
        &self.complementarity
    }

    pub fn tech_change(&self) -> &VectorField {
        &self.tech_change
    }

    pub fn density_change(&self) -> Option<&ScalarField> {
        self.density_change.as_ref()
    }
}

/// Floors a density at [`DENSITY_FLOOR`] times its maximum and rescales it to unit mass.
pub fn normalize_density(f: &ScalarField) -> Result<ScalarField> {
    if f.values().iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidField("density must be finite and non-negative".into()));
    }
    let max = f.max();
    if !(max > 0.0) {
        return Err(Error::InvalidField("density is identically zero".into()));
    }
    let floored = f.map(|v| v.max(DENSITY_FLOOR * max));
    let mass = grid::integrate(&floored);
    Ok(floored.map(|v| v / mass))
}

/// Scalar diagnostics of a decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `⟨v, ṙ⟩_f`.
    pub orthogonality: f64,
    /// `|⟨v, ṙ⟩_f| / (‖v‖_f ‖ṙ‖_f)`, zero when either norm vanishes.
    pub orthogonality_relative: f64,
    /// L2 norm over interior nodes of `∇·(ṙf)` (minus `ḟ` when present).
    pub divergence_residual: f64,
    pub max_boundary_flux: f64,
    pub boundary_flux_l2: f64,
    /// L2 norm of the forward-difference curl of `v`.
    pub curl_residual: f64,
    /// `½∫ṙᵀCṙf`.
    pub output_gain: f64,
    pub iterations: usize,
    pub solver_residual: f64,
    pub psi: Option<f64>,
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct DecompositionResult {
    /// `v = ∇ẇ`.
    pub earnings_gradient: VectorField,
    /// Mean-zero potential `ẇ`.
    pub earnings_change: ScalarField,
    /// `ṙ = C⁻¹(Ȧ − v)`. With a density change this is the net displacement
    /// of reallocation and distribution shift.
    pub reallocation: VectorField,
    pub net_displacement: bool,
    pub diagnostics: Diagnostics,
}

/// Runs the solver selected in `opts`.
pub fn decompose(input: &DecompositionInput, opts: &SolverOptions) -> Result<DecompositionResult> {
    match opts.solver {
        Solver::Penalized => gradient_regression(input, opts),
        Solver::Direct => solve_poisson_direct(input, opts),
    }
}

/// Default penalty `1e4 · median eigenvalue of C_f · Δ⁻²`.
pub fn default_psi(input: &DecompositionInput) -> f64 {
    let g = input.grid();
    let d = g.dim();
    let mut eigs = Vec::with_capacity(g.len() * d);
    for a in 0..g.len() {
        let f = input.density.values()[a];
        let inv = invert(input.complementarity.at(a), d);
        eigs.extend(sym_eigenvalues(&inv, d).into_iter().map(|l| f * l));
    }
    eigs.sort_by(f64::total_cmp);
    let median = if eigs.len() % 2 == 1 {
        eigs[eigs.len() / 2]
    } else {
        0.5 * (eigs[eigs.len() / 2 - 1] + eigs[eigs.len() / 2])
    };
    1e4 * median / g.cell_volume()
}

/// Penalized gradient regression on forward differences.
pub fn gradient_regression(input: &DecompositionInput, opts: &SolverOptions) -> Result<DecompositionResult> {
    if input.density_change.is_some() {
        return Err(Error::InvalidInput(
            "the penalized solver does not take a density change; use the direct solver".into(),
        ));
    }
    let g = input.grid().clone();
    if g.dim() == 1 {
        return one_dimensional(input);
    }
    g.check_resolution()?;
    let psi = opts.psi.unwrap_or_else(|| default_psi(input));
    if !(psi > 0.0 && psi.is_finite()) {
        return Err(Error::InvalidInput(format!("penalty must be positive, got {psi}")));
    }
    let cell = g.cell_volume();
    let blocks = metric_blocks(input);
    let q = curl_penalty(&g)?;
    let qtq = &transpose(&q) * &q;
    let za = input.tech_change.values();
    let (system, rhs) = match opts.penalty_form {
        PenaltyForm::Quadratic => {
            let b = block_matrix(&blocks, g.dim());
            (&b + &qtq.map(|v| v * psi * cell), apply(&b, za))
        }
        PenaltyForm::Squared => {
            // Scale so that B/cell is the per-node metric, then square it.
            let scaled: Vec<f64> = blocks.iter().map(|v| v / cell).collect();
            let b = block_matrix(&scaled, g.dim());
            let b2 = (&b * &b).map(|v| v * cell);
            let rhs = apply(&b2, za);
            (&b2 + &qtq.map(|v| v * psi * cell), rhs)
        }
    };
    let lin = resolve(&opts.linear, &g);
    let (z, info) = linalg::solve_spd(&system, &rhs, opts.initial_guess.as_deref(), &lin)?;

    let gf = gradient_matrix(&g, GradientScheme::Forward);
    let (w, _) = fit_potential(&g, &gf, &blocks, &z, None, &lin, None)?;
    let mut result = finish(input, &gf, w, info)?;
    result.diagnostics.psi = Some(psi);
    Ok(result)
}

/// Direct weighted least-squares solve of the flux-form Poisson problem.
pub fn solve_poisson_direct(input: &DecompositionInput, opts: &SolverOptions) -> Result<DecompositionResult> {
    let g = input.grid().clone();
    if g.dim() == 1 && input.density_change.is_none() {
        return one_dimensional(input);
    }
    g.check_resolution()?;
    let blocks = metric_blocks(input);
    let gm = gradient_matrix(&g, opts.scheme);
    let lin = resolve(&opts.linear, &g);
    let source = input.density_change.as_ref().map(|fdot| {
        fdot.values().iter().zip(g.weights()).map(|(v, w)| v * w).collect::<Vec<_>>()
    });
    let (w, info) = fit_potential(
        &g,
        &gm,
        &blocks,
        input.tech_change.values(),
        source.as_deref(),
        &lin,
        opts.initial_guess.as_deref(),
    )?;
    finish(input, &gm, w, info)
}

/// Least-squares potential of a vector field on forward differences.
///
/// Returns the mean-zero `ẇ` and the relative fit residual `‖∇ẇ − v‖/‖v‖`.
/// Fails with [`Error::NotAGradient`] when the scale-free curl residual
/// `‖curl v‖·diam/‖v‖` exceeds `curl_tol`.
pub fn recover_potential(v: &VectorField, curl_tol: f64) -> Result<(ScalarField, f64)> {
    let g = v.grid().clone();
    let vnorm = l2(&g, v.values(), g.dim());
    if g.dim() == 2 && vnorm > 0.0 {
        let curl = grid::curl2d(v)?;
        let rel = l2(&g, curl.values(), 1) * g.diameter() / vnorm;
        if rel > curl_tol {
            return Err(Error::NotAGradient { residual: rel });
        }
    }
    let d = g.dim();
    let mut blocks = vec![0.0; g.len() * d * d];
    for (a, w) in g.weights().iter().enumerate() {
        for k in 0..d {
            blocks[a * d * d + k * d + k] = *w;
        }
    }
    let gf = gradient_matrix(&g, GradientScheme::Forward);
    let lin = SolveOptions { method: LinearSolver::BandedCholesky, ..SolveOptions::default() };
    let lin = if g.counts()[0].max(g.counts()[1]) > DIRECT_FACTOR_MAX_N {
        SolveOptions { method: LinearSolver::ConjugateGradient, tol: 1e-12, ..lin }
    } else {
        lin
    };
    let (w, _) = fit_potential(&g, &gf, &blocks, v.values(), None, &lin, None)?;
    let fit = apply(&gf, &w);
    let diff: Vec<f64> = fit.iter().zip(v.values()).map(|(a, b)| a - b).collect();
    let resid = if vnorm > 0.0 { l2(&g, &diff, d) / vnorm } else { 0.0 };
    Ok((ScalarField::new(g, w)?, resid))
}

/// `½∫ṙᵀCṙf`.
pub fn output_gain(r: &VectorField, c: &MatrixField, f: &ScalarField) -> Result<f64> {
    ensure_same(r.grid(), c.grid())?;
    ensure_same(r.grid(), f.grid())?;
    let g = r.grid();
    let d = g.dim();
    let mut total = 0.0;
    for a in 0..g.len() {
        let ra = r.at(a);
        let ca = c.at(a);
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += ra[i] * ca[i * d + j] * ra[j];
            }
        }
        total += g.weights()[a] * f.values()[a] * q;
    }
    Ok(0.5 * total)
}

/// Residuals of the market-clearing conditions `∇·(ṙf) = ḟ` and `ṙf·n = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub divergence_residual: f64,
    pub max_boundary_flux: f64,
    pub boundary_flux_l2: f64,
}

pub fn feasibility_report(r: &VectorField, f: &ScalarField, fdot: Option<&ScalarField>) -> Result<FeasibilityReport> {
    ensure_same(r.grid(), f.grid())?;
    let g = r.grid();
    let flux_values: Vec<f64> = (0..g.len())
        .flat_map(|a| r.at(a).iter().map(move |v| v * f.values()[a]).collect::<Vec<_>>())
        .collect();
    let rf = VectorField::new(g.clone(), flux_values)?;
    let div = grid::divergence(&rf);
    if let Some(fd) = fdot {
        ensure_same(g, fd.grid())?;
    }
    let mut sq = 0.0;
    for a in 0..g.len() {
        if g.is_interior(a) {
            let source = fdot.map_or(0.0, |fd| fd.values()[a]);
            let e = div.values()[a] - source;
            sq += g.weights()[a] * e * e;
        }
    }
    let flux = grid::boundary_flux(r, f)?;
    let max_boundary_flux = flux.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let boundary_flux_l2 = (flux.iter().map(|v| v * v).sum::<f64>() * g.boundary_share()).sqrt();
    Ok(FeasibilityReport { divergence_residual: sq.sqrt(), max_boundary_flux, boundary_flux_l2 })
}

/// One-dimensional case: every field is a gradient, so nothing is reallocated.
fn one_dimensional(input: &DecompositionInput) -> Result<DecompositionResult> {
    let g = input.grid().clone();
    let a = input.tech_change.values();
    let h = g.spacing()[0];
    let mut w = vec![0.0; g.len()];
    for k in 1..g.len() {
        w[k] = w[k - 1] + 0.5 * h * (a[k - 1] + a[k]);
    }
    center(&g, &mut w);
    let v = input.tech_change.clone();
    let r = VectorField::zeros(&g);
    let diagnostics = diagnostics(input, &v, &r, SolveInfo { iterations: 0, residual: 0.0 })?;
    Ok(DecompositionResult {
        earnings_gradient: v,
        earnings_change: ScalarField::new(g, w)?,
        reallocation: r,
        net_displacement: false,
        diagnostics,
    })
}

fn finish(input: &DecompositionInput, gm: &CsMat<f64>, w: Vec<f64>, info: SolveInfo) -> Result<DecompositionResult> {
    let g = input.grid().clone();
    let d = g.dim();
    let v = apply(gm, &w);
    let mut r = vec![0.0; v.len()];
    for p in 0..g.len() {
        let inv = invert(input.complementarity.at(p), d);
        for i in 0..d {
            r[p * d + i] = (0..d).map(|j| inv[i * d + j] * (input.tech_change.values()[p * d + j] - v[p * d + j])).sum();
        }
    }
    let v = VectorField::new(g.clone(), v)?;
    let r = VectorField::new(g.clone(), r)?;
    let diagnostics = diagnostics(input, &v, &r, info)?;
    Ok(DecompositionResult {
        earnings_gradient: v,
        earnings_change: ScalarField::new(g, w)?,
        reallocation: r,
        net_displacement: input.density_change.is_some(),
        diagnostics,
    })
}

fn diagnostics(input: &DecompositionInput, v: &VectorField, r: &VectorField, info: SolveInfo) -> Result<Diagnostics> {
    let g = input.grid();
    let f = &input.density;
    let orthogonality = grid::inner_product(v, r, f)?;
    let nv = grid::norm_f(v, f)?;
    let nr = grid::norm_f(r, f)?;
    let orthogonality_relative = if nv > 0.0 && nr > 0.0 { orthogonality.abs() / (nv * nr) } else { 0.0 };
    let feas = feasibility_report(r, f, input.density_change.as_ref())?;
    let curl_residual = if g.dim() == 2 { l2(g, grid::curl2d(v)?.values(), 1) } else { 0.0 };
    Ok(Diagnostics {
        orthogonality,
        orthogonality_relative,
        divergence_residual: feas.divergence_residual,
        max_boundary_flux: feas.max_boundary_flux,
        boundary_flux_l2: feas.boundary_flux_l2,
        curl_residual,
        output_gain: output_gain(r, &input.complementarity, f)?,
        iterations: info.iterations,
        solver_residual: info.residual,
        psi: None,
        threads: 1,
    })
}

/// Solves `min (target − Gw)ᵀ B (target − Gw) − 2 wᵀ source` for a mean-zero `w`.
fn fit_potential(
    g: &Grid,
    gm: &CsMat<f64>,
    blocks: &[f64],
    target: &[f64],
    source: Option<&[f64]>,
    lin: &SolveOptions,
    initial: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveInfo)> {
    let b = block_matrix(blocks, g.dim());
    let bg = &b * gm;
    let lap = &transpose(gm) * &bg;
    let mut rhs = apply_transpose(gm, &apply(&b, target));
    if let Some(s) = source {
        for (r, s) in rhs.iter_mut().zip(s) {
            *r += s;
        }
    }
    // The operator annihilates constants; pinning one node removes the null
    // space and the right-hand side is compatible because Gᵀ has zero column sums.
    let pinned = linalg::pin(&lap, &mut rhs, 0);
    let x0 = initial.map(|x| {
        let mut x = x.to_vec();
        let shift = x[0];
        x.iter_mut().for_each(|v| *v -= shift);
        x
    });
    let (mut w, info) = linalg::solve_spd(&pinned, &rhs, x0.as_deref(), lin)?;
    center(g, &mut w);
    Ok((w, info))
}

fn center(g: &Grid, w: &mut [f64]) {
    let mean = w.iter().zip(g.weights()).map(|(v, a)| v * a).sum::<f64>() / g.measure();
    w.iter_mut().for_each(|v| *v -= mean);
}

fn resolve(opts: &SolveOptions, g: &Grid) -> SolveOptions {
    let mut out = opts.clone();
    if out.method == LinearSolver::Auto {
        let n = g.counts()[0].max(if g.dim() == 2 { g.counts()[1] } else { 0 });
        out.method = if n <= DIRECT_FACTOR_MAX_N {
            LinearSolver::BandedCholesky
        } else {
            LinearSolver::ConjugateGradient
        };
    }
    out
}

/// Per-node `ω f C⁻¹` blocks, row-major.
fn metric_blocks(input: &DecompositionInput) -> Vec<f64> {
    let g = input.grid();
    let d = g.dim();
    let mut out = Vec::with_capacity(g.len() * d * d);
    for a in 0..g.len() {
        let s = g.weights()[a] * input.density.values()[a];
        out.extend(invert(input.complementarity.at(a), d).into_iter().map(|v| v * s));
    }
    out
}

fn block_matrix(blocks: &[f64], d: usize) -> CsMat<f64> {
    let n = blocks.len() / (d * d);
    let mut tri = TriMat::with_capacity((n * d, n * d), blocks.len());
    for a in 0..n {
        for i in 0..d {
            for j in 0..d {
                let v = blocks[a * d * d + i * d + j];
                if v != 0.0 {
                    tri.add_triplet(a * d + i, a * d + j, v);
                }
            }
        }
    }
    tri.to_csr()
}

fn transpose(m: &CsMat<f64>) -> CsMat<f64> {
    m.transpose_view().to_csr()
}

/// Inverse of a 1 × 1 or symmetric 2 × 2 block.
fn invert(m: &[f64], d: usize) -> Vec<f64> {
    match d {
        1 => vec![1.0 / m[0]],
        2 => {
            let det = m[0] * m[3] - m[1] * m[2];
            vec![m[3] / det, -m[1] / det, -m[2] / det, m[0] / det]
        }
        _ => unreachable!("grid dimension is 1 or 2"),
    }
}

fn sym_eigenvalues(m: &[f64], d: usize) -> Vec<f64> {
    match d {
        1 => vec![m[0]],
        _ => {
            let tr = 0.5 * (m[0] + m[3]);
            let off = 0.5 * (m[1] + m[2]);
            let disc = (0.25 * (m[0] - m[3]).powi(2) + off * off).sqrt();
            vec![tr - disc, tr + disc]
        }
    }
}

/// Quadrature L2 norm of a field stored with `d` components per node.
fn l2(g: &Grid, values: &[f64], d: usize) -> f64 {
    g.weights()
        .iter()
        .enumerate()
        .map(|(a, w)| w * values[a * d..(a + 1) * d].iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn gaussian(g: &Arc<Grid>, sigma: f64) -> ScalarField {
        ScalarField::from_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * sigma * sigma)).exp())
    }

    fn rel_err(a: &VectorField, exact: impl Fn([f64; 2]) -> [f64; 2], f: &ScalarField) -> f64 {
        let e = VectorField::from_fn(a.grid(), exact);
        let diff = a.axpby(1.0, &e, -1.0).unwrap();
        grid::norm_f(&diff, f).unwrap() / grid::norm_f(&e, f).unwrap()
    }

    #[test]
    fn penalty_rows_annihilate_gradients() {
        let g = Grid::disk([0.0, 0.0], 1.0, 17).unwrap();
        let q = curl_penalty(&g).unwrap();
        let s = ScalarField::from_fn(&g, |x| (3.0 * x[0]).sin() * x[1] + x[0].powi(3));
        let z = grid::gradient(&s);
        let scale = z.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(apply(&q, z.values()).iter().all(|v| v.abs() < 1e-12 * scale));
    }

    #[test]
    fn penalty_rows_on_rotation() {
        // The stencil v1(i,j+1) − v1(i,j) − v2(i+1,j) + v2(i,j) gives +2Δ for (x2, −x1).
        let g = Grid::rect([0.0, 0.0], [6.0, 6.0], [7, 7]).unwrap();
        let q = curl_penalty(&g).unwrap();
        let z = VectorField::from_fn(&g, |x| [x[1], -x[0]]);
        let qz = apply(&q, z.values());
        for (a, row) in q.outer_iterator().enumerate() {
            if row.nnz() > 0 {
                assert_abs_diff_eq!(qz[a], 2.0, epsilon = 1e-12);
            } else {
                let [i, j] = g.lattice_coords(a);
                assert!(i == 6 || j == 6);
            }
        }
    }

    #[test]
    fn recover_potential_examples() {
        let g = Grid::unit_square(12).unwrap();
        let (w, _) = recover_potential(&VectorField::from_fn(&g, |_| [1.0, 0.0]), 1e-8).unwrap();
        for (a, x) in g.points().enumerate() {
            assert_abs_diff_eq!(w.values()[a], x[0] - 0.5, epsilon = 1e-10);
        }
        let (w, resid) = recover_potential(&VectorField::from_fn(&g, |x| [x[1], x[0]]), 1e-8).unwrap();
        let mean: f64 = g.points().zip(g.weights()).map(|(x, a)| x[0] * x[1] * a).sum();
        for (a, x) in g.points().enumerate() {
            assert_abs_diff_eq!(w.values()[a], x[0] * x[1] - mean, epsilon = 1e-8);
        }
        assert!(resid < 1e-10);
        let err = recover_potential(&VectorField::from_fn(&g, |x| [x[1], -x[0]]), 1e-8);
        assert!(matches!(err, Err(Error::NotAGradient { .. })));
    }

    #[test]
    fn output_gain_examples() {
        let g = Grid::disk([0.0, 0.0], 1.0, 128).unwrap();
        let f = ScalarField::constant(&g, 1.0 / g.measure());
        let c = MatrixField::identity(&g);
        assert_eq!(output_gain(&VectorField::zeros(&g), &c, &f).unwrap(), 0.0);
        let r = VectorField::from_fn(&g, |x| [x[1] / 2.0, -x[0] / 2.0]);
        let gain = output_gain(&r, &c, &f).unwrap();
        assert!((gain - 1.0 / 16.0).abs() < 1e-3, "{gain}");
        let r2 = r.axpby(2.0, &r, 0.0).unwrap();
        assert_abs_diff_eq!(output_gain(&r2, &c, &f).unwrap(), 4.0 * gain, epsilon = 1e-14);
    }

    #[test]
    fn feasibility_examples() {
        let g = Grid::disk([0.0, 0.0], 1.0, 65).unwrap();
        let f = normalize_density(&gaussian(&g, 0.3)).unwrap();
        let rot = feasibility_report(&VectorField::from_fn(&g, |x| [x[1], -x[0]]), &f, None).unwrap();
        let h = g.spacing()[0];
        assert!(rot.divergence_residual < 10.0 * h && rot.max_boundary_flux < 1e-10);
        let shift = feasibility_report(&VectorField::from_fn(&g, |_| [1.0, 0.0]), &f, None).unwrap();
        assert!(shift.divergence_residual > 1.0);

        let line = Grid::interval(-1.0, 1.0, 33).unwrap();
        let f = ScalarField::constant(&line, 0.5);
        let rep = feasibility_report(&VectorField::zeros(&line), &f, None).unwrap();
        assert_eq!((rep.divergence_residual, rep.max_boundary_flux), (0.0, 0.0));
    }

    #[test]
    fn density_floor_and_compatibility() {
        let g = Grid::unit_square(9).unwrap();
        let f = ScalarField::from_fn(&g, |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        let nf = normalize_density(&f).unwrap();
        assert!(nf.values().iter().all(|&v| v > 0.0));
        assert_abs_diff_eq!(grid::integrate(&nf), 1.0, epsilon = 1e-12);
        assert!(normalize_density(&f.map(|v| -v)).is_err());

        let input = DecompositionInput::new(nf, MatrixField::identity(&g), VectorField::zeros(&g)).unwrap();
        let bad = ScalarField::constant(&g, 1.0);
        assert!(matches!(input.clone().with_density_change(bad), Err(Error::Compatibility { .. })));
        let ok = ScalarField::from_fn(&g, |x| (PI * x[0]).cos());
        assert!(input.clone().with_density_change(ok.clone()).is_ok());
        let with = input.with_density_change(ok).unwrap();
        assert!(gradient_regression(&with, &SolverOptions::penalized()).is_err());
    }

    fn bilinear_input(n: usize, sigma: f64) -> DecompositionInput {
        let g = Grid::disk([0.0, 0.0], 1.0, n).unwrap();
        let f = gaussian(&g, sigma);
        let a = VectorField::from_fn(&g, |x| [x[1], 0.0]);
        DecompositionInput::new(f, MatrixField::identity(&g), a).unwrap()
    }

    #[test]
    fn direct_solver_mixed_case() {
        let input = bilinear_input(33, 0.2);
        let res = solve_poisson_direct(&input, &SolverOptions::direct()).unwrap();
        let f = input.density();
        let ev = rel_err(&res.earnings_gradient, |x| [x[1] / 2.0, x[0] / 2.0], f);
        let er = rel_err(&res.reallocation, |x| [x[1] / 2.0, -x[0] / 2.0], f);
        assert!(ev < 0.05 && er < 0.05, "{ev} {er}");
        assert!(res.diagnostics.orthogonality_relative < 1e-8);
        let recon = res.earnings_gradient.axpby(1.0, &res.reallocation, 1.0).unwrap();
        for (p, q) in recon.values().iter().zip(input.tech_change().values()) {
            assert!((p - q).abs() < 1e-12);
        }
        let mean: f64 = res.earnings_change.values().iter().zip(input.grid().weights()).map(|(v, w)| v * w).sum();
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn penalized_solver_mixed_case() {
        let input = bilinear_input(33, 0.2);
        // The squared form projects in an f²-weighted norm before the refit,
        // so it is less accurate and only the quadratic form is orthogonal.
        for (form, tol, orth) in [(PenaltyForm::Quadratic, 0.15, 1e-8), (PenaltyForm::Squared, 0.3, 0.1)] {
            let opts = SolverOptions { penalty_form: form, ..SolverOptions::penalized() };
            let res = gradient_regression(&input, &opts).unwrap();
            let ev = rel_err(&res.earnings_gradient, |x| [x[1] / 2.0, x[0] / 2.0], input.density());
            assert!(ev < tol, "{form:?} {ev}");
            assert!(res.diagnostics.orthogonality_relative < orth);
        }
    }

    #[test]
    fn solvers_agree_on_forward_stencil() {
        let input = bilinear_input(25, 0.3);
        let direct = solve_poisson_direct(&input, &SolverOptions { scheme: GradientScheme::Forward, ..Default::default() }).unwrap();
        let pen = gradient_regression(&input, &SolverOptions::penalized()).unwrap();
        let diff = pen.earnings_gradient.axpby(1.0, &direct.earnings_gradient, -1.0).unwrap();
        let rel = grid::norm_f(&diff, input.density()).unwrap() / grid::norm_f(&direct.earnings_gradient, input.density()).unwrap();
        assert!(rel < 1e-3, "{rel}");
    }

    #[test]
    fn regression_is_idempotent() {
        let input = bilinear_input(25, 0.3);
        let opts = SolverOptions::penalized();
        let first = gradient_regression(&input, &opts).unwrap();
        let again = DecompositionInput::new(
            input.density().clone(),
            input.complementarity().clone(),
            first.earnings_gradient.clone(),
        )
        .unwrap();
        let second = gradient_regression(&again, &opts).unwrap();
        let f = input.density();
        let diff = second.earnings_gradient.axpby(1.0, &first.earnings_gradient, -1.0).unwrap();
        let scale = grid::norm_f(&first.earnings_gradient, f).unwrap();
        assert!(grid::norm_f(&diff, f).unwrap() < 1e-6 * scale);
        assert!(grid::norm_f(&second.reallocation, f).unwrap() < 1e-6 * scale);
    }

    #[test]
    fn gradient_change_passes_through() {
        let g = Grid::unit_square(17).unwrap();
        let f = ScalarField::from_fn(&g, |x| 1.0 + x[0] * x[1]);
        let c = MatrixField::constant(&g, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        let a = VectorField::from_fn(&g, |x| [2.0 * x[0], 2.0 * x[1]]);
        let input = DecompositionInput::new(f, c, a).unwrap();
        let res = solve_poisson_direct(&input, &SolverOptions::direct()).unwrap();
        assert!(res.reallocation.values().iter().all(|v| v.abs() < 1e-9));
        let mean: f64 = g.points().zip(g.weights()).map(|(x, w)| (x[0] * x[0] + x[1] * x[1]) * w).sum();
        for (a, x) in g.points().enumerate() {
            assert_abs_diff_eq!(res.earnings_change.values()[a], x[0] * x[0] + x[1] * x[1] - mean, epsilon = 1e-9);
        }
    }

    #[test]
    fn one_dimensional_grid_has_no_reallocation() {
        let g = Grid::interval(0.0, 2.0, 41).unwrap();
        let f = ScalarField::from_fn(&g, |x| 1.0 + x[0]);
        let c = MatrixField::constant(&g, &[3.0]).unwrap();
        let a = VectorField::from_fn(&g, |x| [x[0].sin(), 0.0]);
        let input = DecompositionInput::new(f, c, a.clone()).unwrap();
        for opts in [SolverOptions::direct(), SolverOptions::penalized()] {
            let res = decompose(&input, &opts).unwrap();
            assert!(res.reallocation.values().iter().all(|&v| v == 0.0));
            assert_eq!(res.earnings_gradient, a);
            assert_eq!(res.diagnostics.divergence_residual, 0.0);
        }
    }

    #[test]
    fn cg_and_cholesky_agree() {
        let input = bilinear_input(21, 0.3);
        let chol = solve_poisson_direct(&input, &SolverOptions::direct()).unwrap();
        let mut opts = SolverOptions::direct();
        opts.linear.method = LinearSolver::ConjugateGradient;
        opts.linear.tol = 1e-12;
        let cg = solve_poisson_direct(&input, &opts).unwrap();
        let diff = cg.earnings_gradient.axpby(1.0, &chol.earnings_gradient, -1.0).unwrap();
        let f = input.density();
        assert!(grid::norm_f(&diff, f).unwrap() < 1e-8 * grid::norm_f(&chol.earnings_gradient, f).unwrap());
    }
}

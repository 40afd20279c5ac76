//! Cognitive skill-biased technological change on an estimated skill density.
//!
//! Skills are ordered `x = (x_m, x_c)`, so the worker–worker matrix is
//! `Σ = [[δ, β], [β, α]]` and the change is `Σ̇ = [[0, 0], [γ̇, δ̇]]`: the
//! marginal product of manual skill is unaffected and that of cognitive skill
//! rises by `γ̇x_m + δ̇x_c`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::io::write_node_table;
use crate::grid::{Grid, MatrixField, ScalarField, VectorField};
use crate::helmholtz::{self, DecompositionInput, DecompositionResult, SolverOptions};
use crate::inference::{self, Skills, TechParams, WorkerRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualConfig {
    pub params: TechParams,
    pub gamma_dot: f64,
    pub delta_dot: f64,
    /// Lattice points per axis of the skill grid.
    pub n: usize,
    /// Winsorization percentiles applied to each skill.
    pub winsor: (f64, f64),
    /// Kernel bandwidth per axis; rule of thumb when `None`.
    pub bandwidth: Option<[f64; 2]>,
    /// Padding of the grid around the winsorized skills, as a fraction of their range.
    pub margin: f64,
    pub solver: SolverOptions,
}

impl CounterfactualConfig {
    pub fn new(params: TechParams, gamma_dot: f64, delta_dot: f64) -> Self {
        Self {
            params,
            gamma_dot,
            delta_dot,
            n: 48,
            winsor: (1.0, 99.0),
            bandwidth: None,
            margin: 0.1,
            solver: SolverOptions::default(),
        }
    }

    /// `Σ̇` in `(x_m, x_c)` order.
    pub fn rate(&self) -> Matrix2<f64> {
        Matrix2::new(0.0, 0.0, self.gamma_dot, self.delta_dot)
    }
}

/// Local linear fit of the reallocation near the density mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeRotation {
    pub mode: [f64; 2],
    /// Antisymmetric part `(J₂₁ − J₁₂)/2` of the fitted Jacobian; positive is counterclockwise.
    pub rotation: f64,
    pub jacobian: [[f64; 2]; 2],
}

impl ModeRotation {
    pub fn counterclockwise(&self) -> bool {
        self.rotation > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct CounterfactualResult {
    pub input: DecompositionInput,
    pub decomposition: DecompositionResult,
    /// `ẇ` shifted to the level implied by degree-2 homogeneity, `∫ẇf = ∫½x·∇ẇ f`.
    pub earnings_change: ScalarField,
    /// `100·ẇ/w` with `w = ½xᵀΣx`.
    pub pct_change: ScalarField,
    /// Nodes adjacent to a sign change of `pct_change`, on the side closer to zero.
    pub zero_isocurve: Vec<bool>,
    pub rotation: ModeRotation,
    pub bandwidth: [f64; 2],
}

/// Infers skills, estimates their density and runs the decomposition.
pub fn run_from_records(records: &[WorkerRecord], cfg: &CounterfactualConfig) -> Result<CounterfactualResult> {
    let skills = inference::infer_all(records, &cfg.params)?;
    run(&skills, cfg)
}

pub fn run(skills: &[Skills], cfg: &CounterfactualConfig) -> Result<CounterfactualResult> {
    cfg.params.validate()?;
    if !(cfg.gamma_dot >= 0.0 && cfg.delta_dot >= 0.0) {
        return Err(Error::InvalidInput("rates must be non-negative".into()));
    }
    let points: Vec<[f64; 2]> = skills.iter().map(Skills::point).collect();
    let points = inference::winsorize_points(&points, cfg.winsor.0, cfg.winsor.1)?;
    let grid = skill_grid(&points, cfg.n, cfg.margin)?;
    let bandwidth = match cfg.bandwidth {
        Some(h) => h,
        None => inference::silverman_bandwidth(&points)?,
    };
    let density = inference::kde_density(&points, Some(bandwidth), &grid)?;

    let sigma = cfg.params.sigma();
    let c = MatrixField::constant(&grid, &[sigma[(0, 0)], sigma[(0, 1)], sigma[(1, 0)], sigma[(1, 1)]])?;
    let a = tech_change(&grid, cfg.gamma_dot, cfg.delta_dot);
    let input = DecompositionInput::new(density, c, a)?;
    let decomposition = helmholtz::decompose(&input, &cfg.solver)?;

    let earnings_change = level(&input, &decomposition);
    let pct: Vec<f64> = grid
        .points()
        .zip(earnings_change.values())
        .map(|(x, wd)| {
            let w = 0.5 * (sigma[(0, 0)] * x[0] * x[0] + 2.0 * sigma[(0, 1)] * x[0] * x[1] + sigma[(1, 1)] * x[1] * x[1]);
            100.0 * wd / w
        })
        .collect();
    let pct_change = ScalarField::new(grid.clone(), pct)?;
    let zero_isocurve = sign_change_nodes(&pct_change);
    let rotation = rotation_at_mode(input.density(), &decomposition.reallocation, bandwidth)?;
    Ok(CounterfactualResult { input, decomposition, earnings_change, pct_change, zero_isocurve, rotation, bandwidth })
}

/// `Ȧ(x) = (0, γ̇x_m + δ̇x_c)`.
pub fn tech_change(grid: &Arc<Grid>, gamma_dot: f64, delta_dot: f64) -> VectorField {
    VectorField::from_fn(grid, |x| [0.0, gamma_dot * x[0] + delta_dot * x[1]])
}

/// Rectangle around the points, padded by `margin` times the range, with
/// positive lower corner.
fn skill_grid(points: &[[f64; 2]], n: usize, margin: f64) -> Result<Arc<Grid>> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    for k in 0..2 {
        let pad = margin * (hi[k] - lo[k]).max(1e-6 * hi[k].abs().max(1.0));
        lo[k] = (lo[k] - pad).max(0.5 * lo[k]);
        hi[k] += pad;
    }
    Grid::rect(lo, hi, [n, n])
}

fn level(input: &DecompositionInput, dec: &DecompositionResult) -> ScalarField {
    let g = input.grid();
    let f = input.density().values();
    let v = &dec.earnings_gradient;
    let w = dec.earnings_change.values();
    let mut shift = 0.0;
    for (a, x) in g.points().enumerate() {
        let euler = 0.5 * (x[0] * v.at(a)[0] + x[1] * v.at(a)[1]);
        shift += g.weights()[a] * f[a] * (euler - w[a]);
    }
    let mass: f64 = g.weights().iter().zip(f).map(|(wt, fa)| wt * fa).sum();
    dec.earnings_change.map(|x| x + shift / mass)
}

fn sign_change_nodes(s: &ScalarField) -> Vec<bool> {
    let g = s.grid();
    let v = s.values();
    (0..g.len())
        .map(|a| {
            (0..g.dim()).any(|k| {
                [-1, 1].iter().any(|&step| {
                    g.neighbor(a, k, step)
                        .is_some_and(|b| (v[a] == 0.0) || (v[a] * v[b] < 0.0 && v[a].abs() <= v[b].abs()))
                })
            })
        })
        .collect()
}

/// Gaussian-weighted (bandwidth `h` around the mode) linear fit `ṙ ≈ c + J(x − mode)`.
pub fn rotation_at_mode(f: &ScalarField, r: &VectorField, h: [f64; 2]) -> Result<ModeRotation> {
    let g = f.grid();
    if g.dim() != 2 {
        return Err(Error::UnsupportedDimension(g.dim()));
    }
    let fv = f.values();
    let mode_idx = (0..g.len()).max_by(|&a, &b| fv[a].total_cmp(&fv[b])).ok_or(Error::EmptySample)?;
    let mode = g.point(mode_idx);
    let mut xtx = Matrix3::<f64>::zeros();
    let mut xty = [Vector3::<f64>::zeros(); 2];
    for (a, x) in g.points().enumerate() {
        let d = [x[0] - mode[0], x[1] - mode[1]];
        let wt = g.weights()[a] * fv[a] * (-0.5 * ((d[0] / h[0]).powi(2) + (d[1] / h[1]).powi(2))).exp();
        let row = Vector3::new(1.0, d[0], d[1]);
        xtx += row * row.transpose() * wt;
        for (k, acc) in xty.iter_mut().enumerate() {
            *acc += row * (r.at(a)[k] * wt);
        }
    }
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::InvalidField("reallocation fit near the mode is singular".into()))?;
    let b0 = inv * xty[0];
    let b1 = inv * xty[1];
    let jacobian = [[b0[1], b0[2]], [b1[1], b1[2]]];
    Ok(ModeRotation { mode, rotation: 0.5 * (jacobian[1][0] - jacobian[0][1]), jacobian })
}

pub const SURFACE_HEADER: [&str; 5] = ["x1", "x2", "wdot", "pct_change", "zero_isocurve"];

/// Writes `x1,x2,wdot,pct_change,zero_isocurve`.
pub fn write_surface<W: Write>(res: &CounterfactualResult, out: W) -> Result<()> {
    let flags: Vec<f64> = res.zero_isocurve.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    write_node_table(
        res.pct_change.grid(),
        &SURFACE_HEADER,
        &[res.earnings_change.values(), res.pct_change.values(), &flags],
        out,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{synthesize_records, SynthesisConfig, REFERENCE_PARAMS};

    fn records() -> Vec<WorkerRecord> {
        let mut cfg = SynthesisConfig::new(50, 40, 5);
        cfg.exact_moments = true;
        synthesize_records(&REFERENCE_PARAMS, &cfg).unwrap()
    }

    #[test]
    fn no_change_means_no_fields() {
        let mut cfg = CounterfactualConfig::new(REFERENCE_PARAMS, 0.0, 0.0);
        cfg.n = 24;
        let res = run_from_records(&records(), &cfg).unwrap();
        let d = &res.decomposition;
        assert!(res.input.tech_change().values().iter().all(|v| *v == 0.0));
        assert!(d.earnings_gradient.values().iter().all(|v| v.abs() < 1e-14));
        assert!(d.reallocation.values().iter().all(|v| v.abs() < 1e-14));
        assert!(res.pct_change.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn cognitive_change_rotates_counterclockwise() {
        let mut cfg = CounterfactualConfig::new(REFERENCE_PARAMS, 0.1, 0.1);
        cfg.n = 32;
        let res = run_from_records(&records(), &cfg).unwrap();
        let g = res.input.grid();
        for (a, x) in g.points().enumerate() {
            let av = res.input.tech_change().at(a);
            assert_eq!(av[0], 0.0);
            assert!((av[1] - (0.1 * x[0] + 0.1 * x[1])).abs() <= 1e-12);
        }
        assert!(res.rotation.counterclockwise(), "{:?}", res.rotation);
        assert!(res.decomposition.diagnostics.orthogonality_relative < 1e-8);
    }

    #[test]
    fn rotation_fit_recovers_linear_field() {
        let g = Grid::rect([-1.0, -1.0], [1.0, 1.0], [21, 21]).unwrap();
        let f = ScalarField::from_fn(&g, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let r = VectorField::from_fn(&g, |x| [0.3 - 0.7 * x[1], 0.7 * x[0] + 0.2 * x[1]]);
        let rot = rotation_at_mode(&f, &r, [0.5, 0.5]).unwrap();
        assert!((rot.rotation - 0.7).abs() < 1e-10);
        assert!((rot.jacobian[1][1] - 0.2).abs() < 1e-10);
    }
}

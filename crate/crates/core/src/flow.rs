//! Large technological changes: integrate the decomposition along a path of
//! bilinear technologies `y_t(x, z) = xᵀ M_t z`.
//!
//! With a linear assignment `z = T_t x` the worker–worker complementarity is
//! `Σ_t = M_t T_t` and its rate is `Ṁ_t T_t`. Each step solves for `(Ṙ, Ẇ)`,
//! advances `T ← T(I + dtṘ)⁻¹` so that `τ_t ∘ r_t` stays fixed, and
//! accumulates the earnings slope `W ← W + dtẆ`.

use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::bilinear::{self, BilinearTech};
use crate::error::{Error, Result};
use crate::grid::{Grid, MatrixField, ScalarField, VectorField};
use crate::helmholtz::{self, DecompositionInput, SolverOptions};

/// Path `M_t = M_0 + t·Ṁ` of job–worker complementarities on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TechPath {
    pub m0: Matrix2<f64>,
    pub rate: Matrix2<f64>,
    /// Initial linear assignment `T_0`.
    pub assignment: Matrix2<f64>,
    pub horizon: f64,
    pub steps: usize,
}

impl TechPath {
    pub fn new(m0: Matrix2<f64>, rate: Matrix2<f64>, horizon: f64, steps: usize) -> Result<Self> {
        Self::with_assignment(m0, rate, Matrix2::identity(), horizon, steps)
    }

    pub fn with_assignment(
        m0: Matrix2<f64>,
        rate: Matrix2<f64>,
        assignment: Matrix2<f64>,
        horizon: f64,
        steps: usize,
    ) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput("path needs a positive horizon and at least one step".into()));
        }
        let path = Self { m0, rate, assignment, horizon, steps };
        let sigma = sym(&(m0 * assignment));
        bilinear::check_spd(&to_dyn(&sigma))?;
        Ok(path)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn m_at(&self, t: f64) -> Matrix2<f64> {
        self.m0 + self.rate * t
    }
}

/// How each step's decomposition is computed.
#[derive(Debug, Clone)]
pub enum FlowRegime {
    /// Closed form for rotationally invariant worker densities.
    Bilinear,
    /// Grid decomposition at every step with the worker density held fixed.
    /// The linear generators are recovered by an `f`-weighted least-squares fit.
    Grid { density: ScalarField, options: SolverOptions },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowStep {
    pub t: f64,
    pub assignment: [[f64; 2]; 2],
    /// Symmetric part of `M_t T_t`.
    pub sigma: [[f64; 2]; 2],
    pub earnings_slope_rate: [[f64; 2]; 2],
    pub realloc: [[f64; 2]; 2],
    /// Cumulative earnings slope `W_t`.
    pub earnings_slope: [[f64; 2]; 2],
    /// `‖M_t T_t − (M_t T_t)ᵀ‖_F`.
    pub defect: f64,
    pub m: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrajectory {
    pub steps: Vec<FlowStep>,
    /// Marker positions after the last step.
    pub markers: Vec<[f64; 2]>,
    /// Product of the per-step rearrangements `Π (I + dtṘ)`.
    pub cumulative_rearrangement: [[f64; 2]; 2],
}

impl FlowTrajectory {
    pub fn last(&self) -> &FlowStep {
        self.steps.last().expect("trajectory has at least the initial record")
    }
}

/// Integrates the path with explicit first-order steps, advecting `markers`.
pub fn integrate_flow(path: &TechPath, regime: &FlowRegime, markers: &[[f64; 2]]) -> Result<FlowTrajectory> {
    let dt = path.dt();
    let mut t_map = path.assignment;
    let mut w = sym(&(path.m0 * path.assignment));
    let mut cumulative = Matrix2::<f64>::identity();
    let mut pts: Vec<Matrix2x1> = markers.iter().map(|p| Matrix2x1::new(p[0], p[1])).collect();
    let mut steps = Vec::with_capacity(path.steps + 1);

    for k in 0..=path.steps {
        let t = k as f64 * dt;
        let m = path.m_at(t);
        let raw = m * t_map;
        let defect = (raw - raw.transpose()).norm();
        let sigma = sym(&raw);
        let dsigma = path.rate * t_map;
        let (realloc, slope) = generators(&sigma, &dsigma, regime).map_err(|e| match e {
            Error::InvalidTechnology(_) => Error::PathBreakdown { t },
            other => other,
        })?;
        steps.push(FlowStep {
            t,
            assignment: rows(&t_map),
            sigma: rows(&sigma),
            earnings_slope_rate: rows(&slope),
            realloc: rows(&realloc),
            earnings_slope: rows(&w),
            defect,
            m: rows(&m),
        });
        if k == path.steps {
            break;
        }
        let step = Matrix2::identity() + realloc * dt;
        t_map *= inverse_rotation_step(&realloc, dt);
        w += slope * dt;
        w = sym(&w);
        cumulative = step * cumulative;
        for p in &mut pts {
            *p = step * *p;
        }
    }
    Ok(FlowTrajectory {
        steps,
        markers: pts.iter().map(|p| [p[0], p[1]]).collect(),
        cumulative_rearrangement: rows(&cumulative),
    })
}

type Matrix2x1 = nalgebra::Vector2<f64>;

/// `(I + dtṘ)⁻¹` for antisymmetric `Ṙ = θ[[0, −1], [1, 0]]`: `(I − dtṘ)/(1 + (dtθ)²)`.
fn inverse_rotation_step(realloc: &Matrix2<f64>, dt: f64) -> Matrix2<f64> {
    let a = dt * realloc[(1, 0)];
    (Matrix2::identity() - realloc * dt) / (1.0 + a * a)
}

fn generators(
    sigma: &Matrix2<f64>,
    dsigma: &Matrix2<f64>,
    regime: &FlowRegime,
) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
    let tech = BilinearTech::new(to_dyn(sigma), to_dyn(dsigma))?;
    match regime {
        FlowRegime::Bilinear => {
            let dec = bilinear::decompose(&tech);
            Ok((to_fixed(&dec.realloc), to_fixed(&dec.earnings_slope)))
        }
        FlowRegime::Grid { density, options } => {
            let g = density.grid().clone();
            let c = MatrixField::constant(&g, &[sigma[(0, 0)], sigma[(0, 1)], sigma[(1, 0)], sigma[(1, 1)]])?;
            let a = VectorField::from_fn(&g, |x| {
                [dsigma[(0, 0)] * x[0] + dsigma[(0, 1)] * x[1], dsigma[(1, 0)] * x[0] + dsigma[(1, 1)] * x[1]]
            });
            let input = DecompositionInput::new(density.clone(), c, a)?;
            let res = helmholtz::decompose(&input, options)?;
            let realloc = fit_linear(&g, input.density(), &res.reallocation);
            let realloc = (realloc - realloc.transpose()) * 0.5;
            Ok((realloc, sym(&fit_linear(&g, input.density(), &res.earnings_gradient))))
        }
    }
}

/// `f`-weighted least-squares `L` with `field(x) ≈ L x`.
fn fit_linear(g: &Arc<Grid>, f: &ScalarField, field: &VectorField) -> Matrix2<f64> {
    let mut xx = Matrix2::<f64>::zeros();
    let mut yx = Matrix2::<f64>::zeros();
    for (a, p) in g.points().enumerate() {
        let w = g.weights()[a] * f.values()[a];
        let x = Matrix2x1::new(p[0], p[1]);
        let y = Matrix2x1::new(field.at(a)[0], field.at(a)[1]);
        xx += x * x.transpose() * w;
        yx += y * x.transpose() * w;
    }
    yx * xx.try_inverse().unwrap_or_else(Matrix2::zeros)
}

fn sym(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

fn rows(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

pub fn to_dyn(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |i, j| m[(i, j)])
}

fn to_fixed(m: &DMatrix<f64>) -> Matrix2<f64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

pub fn matrix_from_rows(r: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1])
}

/// Agreement between the flow endpoint and a discrete assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub sample_size: usize,
    /// Mean `‖z_{σ(i)} − T x_i‖` between oracle partners and flow predictions.
    pub mean_displacement: f64,
    /// Same statistic for the initial assignment, as a reference scale.
    pub mean_displacement_initial: f64,
    pub duality_gap: f64,
}

/// Samples `m` workers uniformly from the unit disk, builds jobs as `T_0` applied
/// to the same sample, and matches them at the path's final technology.
pub fn compare_with_oracle(path: &TechPath, traj: &FlowTrajectory, m: usize, seed: u64) -> Result<OracleComparison> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let workers = crate::oracle::uniform_disk(&mut rng, m);
    let t0 = path.assignment;
    let jobs: Vec<[f64; 2]> = workers.iter().map(|x| apply2(&t0, x)).collect();
    let last = traj.last();
    let m_end = matrix_from_rows(&last.m);
    let t_end = matrix_from_rows(&last.assignment);
    let y: Vec<Vec<f64>> = workers
        .iter()
        .map(|x| jobs.iter().map(|z| dot2(x, &apply2(&m_end, z))).collect())
        .collect();
    let sol = crate::oracle::solve_assignment(&y)?;
    let mean = |map: &Matrix2<f64>| {
        workers
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let z = jobs[sol.permutation[i]];
                let p = apply2(map, x);
                (z[0] - p[0]).hypot(z[1] - p[1])
            })
            .sum::<f64>()
            / m as f64
    };
    Ok(OracleComparison {
        sample_size: m,
        mean_displacement: mean(&t_end),
        mean_displacement_initial: mean(&t0),
        duality_gap: sol.duality_gap,
    })
}

fn apply2(m: &Matrix2<f64>, x: &[f64; 2]) -> [f64; 2] {
    [m[(0, 0)] * x[0] + m[(0, 1)] * x[1], m[(1, 0)] * x[0] + m[(1, 1)] * x[1]]
}

fn dot2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn shear(s: f64) -> Matrix2<f64> {
        Matrix2::new(0.0, s, 0.0, 0.0)
    }

    #[test]
    fn zero_rate_is_constant() {
        let m0 = Matrix2::new(2.0, 0.3, 0.3, 1.0);
        let path = TechPath::new(m0, Matrix2::zeros(), 1.0, 20).unwrap();
        let traj = integrate_flow(&path, &FlowRegime::Bilinear, &[[0.5, 0.1]]).unwrap();
        for s in &traj.steps {
            assert_eq!(s.assignment, [[1.0, 0.0], [0.0, 1.0]]);
            assert_eq!(s.earnings_slope, rows(&m0));
        }
        assert_eq!(traj.markers, vec![[0.5, 0.1]]);
    }

    #[test]
    fn symmetric_rate_passes_through() {
        let rate = Matrix2::new(0.2, 0.1, 0.1, -0.3);
        let path = TechPath::new(Matrix2::identity(), rate, 1.0, 100).unwrap();
        let traj = integrate_flow(&path, &FlowRegime::Bilinear, &[]).unwrap();
        assert_abs_diff_eq!(matrix_from_rows(&traj.steps[0].realloc), Matrix2::zeros(), epsilon = 1e-15);
        let end = traj.last();
        let expect = Matrix2::identity() + rate;
        assert!((matrix_from_rows(&end.earnings_slope) - expect).norm() < 1e-2);
        assert!((matrix_from_rows(&end.assignment) - Matrix2::identity()).norm() < 1e-2);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let m0 = Matrix2::new(1.5, 0.2, 0.2, 0.7);
        let rate = Matrix2::new(0.1, 0.4, -0.2, 0.3);
        let path = TechPath::new(m0, rate, 1.0, 10).unwrap();
        let traj = integrate_flow(&path, &FlowRegime::Bilinear, &[]).unwrap();
        let dec = bilinear::decompose(&BilinearTech::new(to_dyn(&m0), to_dyn(&rate)).unwrap());
        assert_eq!(traj.steps[0].realloc, rows(&to_fixed(&dec.realloc)));
        assert_eq!(traj.steps[0].earnings_slope_rate, rows(&to_fixed(&dec.earnings_slope)));
    }

    #[test]
    fn defect_is_first_order() {
        let ends: Vec<f64> = [100, 200]
            .iter()
            .map(|&k| {
                let path = TechPath::new(Matrix2::identity(), shear(0.2), 1.0, k).unwrap();
                integrate_flow(&path, &FlowRegime::Bilinear, &[]).unwrap().last().defect
            })
            .collect();
        let ratio = ends[0] / ends[1];
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn composition_with_rearrangement_is_initial_map() {
        let path = TechPath::new(Matrix2::new(1.0, 0.1, 0.1, 2.0), shear(0.5), 1.0, 50).unwrap();
        let traj = integrate_flow(&path, &FlowRegime::Bilinear, &[[0.3, -0.4]]).unwrap();
        let t = matrix_from_rows(&traj.last().assignment);
        let r = matrix_from_rows(&traj.cumulative_rearrangement);
        assert!((t * r - Matrix2::identity()).norm() < 1e-12);
        let x = traj.markers[0];
        let tx = apply2(&t, &x);
        assert_abs_diff_eq!(tx[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(tx[1], -0.4, epsilon = 1e-12);
    }

    #[test]
    fn breakdown_is_reported() {
        let path = TechPath::new(Matrix2::identity(), Matrix2::new(-2.0, 0.0, 0.0, 0.0), 1.0, 10).unwrap();
        let err = integrate_flow(&path, &FlowRegime::Bilinear, &[]).unwrap_err();
        assert!(matches!(err, Error::PathBreakdown { t } if t > 0.4 && t <= 0.5 + 1e-12));
    }

    #[test]
    fn grid_regime_tracks_closed_form() {
        let g = Grid::disk([0.0, 0.0], 1.0, 33).unwrap();
        let density = ScalarField::from_fn(&g, |x| (-(x[0] * x[0] + x[1] * x[1]) / 0.08).exp());
        let regime = FlowRegime::Grid { density, options: SolverOptions::direct() };
        let path = TechPath::new(Matrix2::identity(), shear(0.2), 0.5, 5).unwrap();
        let grid = integrate_flow(&path, &regime, &[]).unwrap();
        let exact = integrate_flow(&path, &FlowRegime::Bilinear, &[]).unwrap();
        let a = matrix_from_rows(&grid.last().assignment);
        let b = matrix_from_rows(&exact.last().assignment);
        assert!((a - b).norm() < 5e-3, "{}", (a - b).norm());
    }

    #[test]
    fn oracle_at_start_is_identity() {
        let path = TechPath::new(Matrix2::identity(), shear(0.2), 1e-9, 1).unwrap();
        let traj = integrate_flow(&path, &FlowRegime::Bilinear, &[]).unwrap();
        let cmp = compare_with_oracle(&path, &traj, 60, 3).unwrap();
        assert!(cmp.duality_gap.abs() < 1e-9);
        assert!(cmp.mean_displacement < 1e-6);
    }
}

//! The acceptance suite: twelve end-to-end checks with pinned tolerances.
//!
//! Each check returns a [`CriterionOutcome`] with the measured quantities in
//! its summary, so a failing criterion reports by how much it missed.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bilinear::{self, BilinearTech, TwoByTwo};
use crate::counterfactual::{self, CounterfactualConfig};
use crate::error::Result;
use crate::flow::{self, FlowRegime, TechPath};
use crate::grid::{self, Grid, MatrixField, ScalarField, VectorField};
use crate::helmholtz::{self, DecompositionInput, DecompositionResult, SolverOptions};
use crate::inference::{self, CalibrationOptions, SynthesisConfig, WorkerRecord, REFERENCE_PARAMS};
use crate::oracle;
use crate::scenario::{bilinear_fields, closed_form_fields};

pub mod tol {
    pub const SYLVESTER_RESIDUAL: f64 = 1e-10;
    pub const SYLVESTER_RUNTIME_S: f64 = 1.0;
    pub const ANGLE_AGREEMENT: f64 = 1e-12;
    pub const REFERENCE_ANGLE: f64 = 1e-9;
    pub const GRADIENT_ERROR: f64 = 1e-2;
    pub const REALLOCATION_ERROR: f64 = 2e-2;
    pub const HELMHOLTZ_RUNTIME_S: f64 = 30.0;
    pub const ORTHOGONALITY: f64 = 1e-6;
    pub const ORTHOGONALITY_FLOOR: f64 = 1e-12;
    /// Feasibility residuals must be at most this constant over `n`.
    pub const FEASIBILITY_CONSTANT: f64 = 5.0;
    pub const SYMMETRIC_REALLOCATION: f64 = 1e-6;
    pub const ANTISYMMETRIC_GRADIENT: f64 = 1e-2;
    pub const MANUFACTURED_MAX_ERROR: f64 = 5e-3;
    pub const MANUFACTURED_ORDER: f64 = 1.0;
    pub const GAIN_RELATIVE: f64 = 0.25;
    pub const GAIN_FLOOR: f64 = -1e-9;
    pub const DUALITY_GAP: f64 = 1e-9;
    pub const REARRANGEMENT_GAP: f64 = 1e-9;
    /// Accepted range of the ratio of successive endpoint differences under step halving.
    pub const FLOW_RATIO: (f64, f64) = (1.6, 2.4);
    pub const TABLE_ONE: f64 = 1e-14;
    pub const CALIBRATION_RELATIVE: f64 = 0.05;
    pub const RECONSTRUCTION: f64 = 1e-10;
    pub const COUNTERFACTUAL_FIELD: f64 = 1e-12;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub summary: String,
}

impl CriterionOutcome {
    fn new(id: u8, name: &str, passed: bool, summary: String) -> Self {
        Self { id, name: name.into(), passed, summary }
    }

    fn failed(id: u8, name: &str, err: crate::Error) -> Self {
        Self::new(id, name, false, format!("error: {err}"))
    }

    /// One-line table row.
    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} {:>2} {:<32} {}", self.id, self.name, self.summary)
    }
}

pub const NAMES: [&str; 12] = [
    "sylvester suite",
    "2-d closed form",
    "helmholtz vs closed form",
    "orthogonality and feasibility",
    "symmetry dichotomy",
    "manufactured poisson solution",
    "unidimensional degeneracy",
    "second-order gain",
    "rearrangement equivalence",
    "flow consistency",
    "inference round trip",
    "counterfactual sanity",
];

/// Runs criterion `id` (1–12) with randomness derived from `seed`.
pub fn run_criterion(id: u8, seed: u64) -> CriterionOutcome {
    let name = NAMES.get(usize::from(id).wrapping_sub(1)).copied().unwrap_or("unknown");
    let s = seed.wrapping_add(1000 * u64::from(id));
    let res = match id {
        1 => sylvester_suite(s),
        2 => closed_form_2d(s),
        3 => helmholtz_vs_closed_form(),
        4 => orthogonality_and_feasibility(),
        5 => symmetry_dichotomy(),
        6 => manufactured_solution(),
        7 => unidimensional(),
        8 => second_order_gain(s),
        9 => rearrangement(s),
        10 => flow_consistency(),
        11 => inference_round_trip(s),
        12 => counterfactual_sanity(s),
        _ => Ok((false, format!("no criterion {id}"))),
    };
    match res {
        Ok((passed, summary)) => CriterionOutcome::new(id, name, passed, summary),
        Err(e) => CriterionOutcome::failed(id, name, e),
    }
}

pub fn run_all(seed: u64) -> Vec<CriterionOutcome> {
    (1..=12).map(|id| run_criterion(id, seed)).collect()
}

type Check = Result<(bool, String)>;

fn random_spd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

fn random_matrix(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn sylvester_suite(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let d = 2 + i % 3;
        let tech = BilinearTech::new(random_spd(&mut rng, d), random_matrix(&mut rng, d))?;
        let dec = bilinear::decompose(&tech);
        let (s, ds, r, w) = (tech.sigma(), tech.dsigma(), &dec.realloc, &dec.earnings_slope);
        let scale = ds.norm();
        let residual = (s * r + r * s - (ds - ds.transpose())).norm() / scale;
        let antisym = (r + r.transpose()).norm() / scale;
        let sym = (w - w.transpose()).norm() / scale;
        let recon = (ds - w - s * r).norm() / scale;
        worst = worst.max(residual).max(antisym).max(sym).max(recon);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let passed = worst <= tol::SYLVESTER_RESIDUAL && elapsed < tol::SYLVESTER_RUNTIME_S;
    Ok((passed, format!("worst relative residual {worst:.2e}, {elapsed:.3} s")))
}

fn closed_form_2d(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let s = random_spd(&mut rng, 2);
        let ds = random_matrix(&mut rng, 2);
        let sigma = TwoByTwo { alpha: s[(0, 0)], beta: s[(0, 1)], gamma: s[(1, 0)], delta: s[(1, 1)] };
        let rate = TwoByTwo { alpha: ds[(0, 0)], beta: ds[(0, 1)], gamma: ds[(1, 0)], delta: ds[(1, 1)] };
        let theta = bilinear::rotation_angle_2d(&sigma, &rate)?;
        let r = bilinear::solve_sylvester(&BilinearTech::new(s, ds)?);
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, -theta, theta, 0.0]);
        worst = worst.max((r - expected).amax());
    }
    let sigma = TwoByTwo { alpha: 0.239, beta: 0.020, gamma: 0.020, delta: 0.036 };
    let rate = TwoByTwo { gamma: 0.1, ..TwoByTwo::default() };
    let theta = bilinear::rotation_angle_2d(&sigma, &rate)?;
    let reference_err = (theta - 0.1 / 0.275).abs();
    let passed = worst <= tol::ANGLE_AGREEMENT && reference_err <= tol::REFERENCE_ANGLE;
    Ok((passed, format!("max angle disagreement {worst:.2e}; reference theta {theta:.9}")))
}

/// Truncated Gaussian with standard deviation 0.2 on the unit disk.
pub fn disk_gaussian(n: usize) -> Result<ScalarField> {
    let g = Grid::disk([0.0, 0.0], 1.0, n)?;
    Ok(ScalarField::from_fn(&g, |x| (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * 0.04)).exp()))
}

/// The mixed case `Σ = I`, `Σ̇ = [[0, 1], [0, 0]]`.
pub fn mixed_tech() -> BilinearTech {
    BilinearTech::new(DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]))
        .expect("identity is positive definite")
}

fn bilinear_input(n: usize, tech: &BilinearTech) -> Result<DecompositionInput> {
    let f = disk_gaussian(n)?;
    let (c, a) = bilinear_fields(f.grid(), tech)?;
    DecompositionInput::new(f, c, a)
}

/// `‖u − u*‖_f / ‖u*‖_f`.
pub fn relative_error(u: &VectorField, exact: &VectorField, f: &ScalarField) -> Result<f64> {
    let diff = u.axpby(1.0, exact, -1.0)?;
    Ok(grid::norm_f(&diff, f)? / grid::norm_f(exact, f)?)
}

/// A decomposition of the mixed case with its errors against the closed form.
pub struct MixedRun {
    pub solver: &'static str,
    pub n: usize,
    pub gradient_error: f64,
    pub reallocation_error: f64,
    pub seconds: f64,
    pub result: DecompositionResult,
    pub input: DecompositionInput,
}

pub fn mixed_runs(ns: &[usize]) -> Result<Vec<MixedRun>> {
    let tech = mixed_tech();
    let mut runs = Vec::new();
    for (solver, opts) in [("direct", SolverOptions::direct()), ("penalized", SolverOptions::penalized())] {
        for &n in ns {
            let input = bilinear_input(n, &tech)?;
            let start = Instant::now();
            let result = helmholtz::decompose(&input, &opts)?;
            let seconds = start.elapsed().as_secs_f64();
            let (v_exact, r_exact) = closed_form_fields(input.grid(), &tech);
            let gradient_error = relative_error(&result.earnings_gradient, &v_exact, input.density())?;
            let reallocation_error = relative_error(&result.reallocation, &r_exact, input.density())?;
            runs.push(MixedRun { solver, n, gradient_error, reallocation_error, seconds, result, input });
        }
    }
    Ok(runs)
}

const MIXED_NS: [usize; 3] = [16, 32, 64];

fn helmholtz_vs_closed_form() -> Check {
    let runs = mixed_runs(&MIXED_NS)?;
    let mut passed = true;
    let mut parts = Vec::new();
    for solver in ["direct", "penalized"] {
        let rs: Vec<&MixedRun> = runs.iter().filter(|r| r.solver == solver).collect();
        let last = rs.last().expect("three resolutions");
        let monotone = rs.windows(2).all(|w| {
            w[1].gradient_error < w[0].gradient_error && w[1].reallocation_error < w[0].reallocation_error
        });
        let ok = monotone
            && last.gradient_error <= tol::GRADIENT_ERROR
            && last.reallocation_error <= tol::REALLOCATION_ERROR
            && last.seconds < tol::HELMHOLTZ_RUNTIME_S;
        passed &= ok;
        let errs: Vec<String> = rs.iter().map(|r| format!("{:.4}/{:.4}", r.gradient_error, r.reallocation_error)).collect();
        parts.push(format!("{solver} v/r errors {} ({:.2} s at n=64)", errs.join(" "), last.seconds));
    }
    Ok((passed, parts.join("; ")))
}

fn symmetric_input(n: usize) -> Result<DecompositionInput> {
    let tech = BilinearTech::new(DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, -0.3]))?;
    bilinear_input(n, &tech)
}

fn antisymmetric_input(n: usize) -> Result<DecompositionInput> {
    let f = disk_gaussian(n)?;
    let g = f.grid().clone();
    let a = VectorField::from_fn(&g, |x| [x[1], -x[0]]);
    DecompositionInput::new(f, MatrixField::identity(&g), a)
}

struct Case {
    label: String,
    n: usize,
    input: DecompositionInput,
    result: DecompositionResult,
}

fn dichotomy_cases(n: usize) -> Result<Vec<Case>> {
    let mut out = Vec::new();
    for (solver, opts) in [("direct", SolverOptions::direct()), ("penalized", SolverOptions::penalized())] {
        for (kind, input) in [("symmetric", symmetric_input(n)?), ("antisymmetric", antisymmetric_input(n)?)] {
            let result = helmholtz::decompose(&input, &opts)?;
            out.push(Case { label: format!("{solver} {kind}"), n, input, result });
        }
    }
    Ok(out)
}

fn orthogonality_and_feasibility() -> Check {
    let mut cases: Vec<Case> = mixed_runs(&MIXED_NS)?
        .into_iter()
        .map(|r| Case { label: format!("{} mixed n={}", r.solver, r.n), n: r.n, input: r.input, result: r.result })
        .collect();
    cases.extend(dichotomy_cases(64)?);
    let mut passed = true;
    let mut worst_orth = 0.0f64;
    let mut failures = Vec::new();
    let mut worst_feas = 0.0f64;
    for c in &cases {
        let f = c.input.density();
        let v = &c.result.earnings_gradient;
        let r = &c.result.reallocation;
        let bound = tol::ORTHOGONALITY * grid::norm_f(v, f)? * grid::norm_f(r, f)? + tol::ORTHOGONALITY_FLOOR;
        let orth = c.result.diagnostics.orthogonality.abs();
        let feas = helmholtz::feasibility_report(r, f, None)?;
        let limit = tol::FEASIBILITY_CONSTANT / c.n as f64;
        let scaled = feas.divergence_residual.max(feas.boundary_flux_l2) / limit;
        worst_feas = worst_feas.max(scaled);
        if bound > 0.0 {
            worst_orth = worst_orth.max(orth / bound);
        }
        if orth > bound || scaled > 1.0 {
            passed = false;
            failures.push(format!(
                "{} (orth {:.1e}, div {:.3}, flux {:.3}, limit {:.3})",
                c.label, orth, feas.divergence_residual, feas.boundary_flux_l2, limit
            ));
        }
    }
    let mut summary = format!(
        "{} decompositions; worst orthogonality/bound {worst_orth:.2e}, worst residual/(5/n) {worst_feas:.3}",
        cases.len()
    );
    if !failures.is_empty() {
        summary.push_str(&format!("; failing: {}", failures.join(", ")));
    }
    Ok((passed, summary))
}

fn symmetry_dichotomy() -> Check {
    let cases = dichotomy_cases(64)?;
    let mut passed = true;
    let mut parts = Vec::new();
    for c in &cases {
        let f = c.input.density();
        let a = grid::norm_f(c.input.tech_change(), f)?;
        let (ratio, limit) = if c.label.ends_with(" symmetric") {
            (grid::norm_f(&c.result.reallocation, f)? / a, tol::SYMMETRIC_REALLOCATION)
        } else {
            (grid::norm_f(&c.result.earnings_gradient, f)? / a, tol::ANTISYMMETRIC_GRADIENT)
        };
        let gated = c.label.starts_with("direct");
        if gated {
            passed &= ratio <= limit;
        }
        parts.push(format!("{} {ratio:.2e}{}", c.label, if gated { "" } else { " (reported)" }));
    }
    Ok((passed, parts.join("; ")))
}

/// Unit square, `C = I`, `f = 1`, `Ȧ = 0`, `ḟ = π²cos(πx₁)`; exact `ẇ = cos(πx₁)`.
pub fn manufactured_error(n: usize) -> Result<f64> {
    let g = Grid::unit_square(n)?;
    let f = ScalarField::constant(&g, 1.0);
    let fdot = ScalarField::from_fn(&g, |x| PI * PI * (PI * x[0]).cos());
    let input = DecompositionInput::new(f, MatrixField::identity(&g), VectorField::zeros(&g))?.with_density_change(fdot)?;
    let res = helmholtz::solve_poisson_direct(&input, &SolverOptions::direct())?;
    Ok(g.points()
        .zip(res.earnings_change.values())
        .map(|(x, w)| (w - (PI * x[0]).cos()).abs())
        .fold(0.0, f64::max))
}

fn manufactured_solution() -> Check {
    let e64 = manufactured_error(64)?;
    let e128 = manufactured_error(128)?;
    // Lattice spacings 1/63 and 1/127.
    let order = (e64 / e128).ln() / (127.0f64 / 63.0).ln();
    let passed = e128 <= tol::MANUFACTURED_MAX_ERROR && order >= tol::MANUFACTURED_ORDER;
    Ok((passed, format!("max error {e64:.2e} (n=64), {e128:.2e} (n=128), order {order:.2}")))
}

fn unidimensional() -> Check {
    let g = Grid::interval(-1.0, 2.0, 101)?;
    let f = ScalarField::from_fn(&g, |x| (-x[0] * x[0]).exp());
    let c = MatrixField::constant(&g, &[2.5])?;
    let a = VectorField::from_fn(&g, |x| [(3.0 * x[0]).sin() + x[0] * x[0], 0.0]);
    let input = DecompositionInput::new(f, c, a)?;
    let mut passed = true;
    for opts in [SolverOptions::direct(), SolverOptions::penalized()] {
        let res = helmholtz::decompose(&input, &opts)?;
        passed &= res.reallocation.values().iter().all(|v| *v == 0.0);
        passed &= res.earnings_gradient.values() == input.tech_change().values();
        let feas = helmholtz::feasibility_report(&res.reallocation, input.density(), None)?;
        passed &= feas.divergence_residual == 0.0 && feas.max_boundary_flux == 0.0;
    }
    Ok((passed, format!("both solvers: r identically zero and v = A: {passed}")))
}

pub const GAIN_SAMPLE: usize = 400;
pub const GAIN_TS: [f64; 2] = [0.05, 0.1];

fn second_order_gain(seed: u64) -> Check {
    let tech = mixed_tech();
    let reference = oracle::uniform_disk_density(128)?;
    let mut coefficients = Vec::new();
    let mut min_gain = f64::INFINITY;
    let mut max_gap = 0.0f64;
    let mut analytic = 0.0;
    for k in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + k);
        let sample = oracle::uniform_disk(&mut rng, GAIN_SAMPLE);
        let rep = oracle::second_order_gain_check(&sample, tech.sigma(), tech.dsigma(), &GAIN_TS, &reference)?;
        coefficients.push(rep.coefficient);
        min_gain = rep.gain.iter().copied().fold(min_gain, f64::min);
        max_gap = max_gap.max(rep.max_duality_gap);
        analytic = rep.analytic;
    }
    let mean = coefficients.iter().sum::<f64>() / coefficients.len() as f64;
    let within = coefficients.iter().all(|c| (c - analytic).abs() <= tol::GAIN_RELATIVE * analytic);
    let passed = within && min_gain >= tol::GAIN_FLOOR && max_gap <= tol::DUALITY_GAP;
    let cs: Vec<String> = coefficients.iter().map(|c| format!("{c:.4}")).collect();
    Ok((
        passed,
        format!(
            "coefficients [{}] (mean {mean:.4}) vs analytic {analytic:.4}; min gain {min_gain:.2e}; max duality gap {max_gap:.1e}",
            cs.join(", ")
        ),
    ))
}

fn rearrangement(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_gap = 0.0f64;
    let mut worst_enum = 0.0f64;
    for _ in 0..100 {
        let y: Vec<Vec<f64>> = (0..6).map(|_| (0..6).map(|_| rng.random::<f64>()).collect()).collect();
        let yp: Vec<Vec<f64>> = y.iter().map(|row| row.iter().map(|v| v + 0.5 * rng.random::<f64>()).collect()).collect();
        let rep = oracle::verify_rearrangement_equivalence(&y, &yp)?;
        let (_, best) = oracle::enumerate_best(&yp);
        worst_gap = worst_gap.max(rep.gap.abs());
        worst_enum = worst_enum.max((rep.direct_output - best).abs()).max((rep.rearranged_output - best).abs());
    }
    let passed = worst_gap <= tol::REARRANGEMENT_GAP && worst_enum <= tol::REARRANGEMENT_GAP;
    Ok((passed, format!("worst composition gap {worst_gap:.1e}, worst gap to enumeration {worst_enum:.1e}")))
}

/// Endpoint `(T_T, W_T)` of the reference path with `steps` steps.
fn flow_endpoint(steps: usize) -> Result<Matrix2<f64>> {
    let path = reference_path(steps)?;
    let traj = flow::integrate_flow(&path, &FlowRegime::Bilinear, &[])?;
    let last = traj.last();
    Ok(flow::matrix_from_rows(&last.assignment) + flow::matrix_from_rows(&last.earnings_slope))
}

pub fn reference_path(steps: usize) -> Result<TechPath> {
    TechPath::new(Matrix2::identity(), Matrix2::new(0.0, 0.2, 0.0, 0.0), 1.0, steps)
}

fn flow_consistency() -> Check {
    let path = reference_path(100)?;
    let traj = flow::integrate_flow(&path, &FlowRegime::Bilinear, &[])?;
    let first = &traj.steps[0];
    let sigma = (path.m0 * path.assignment + (path.m0 * path.assignment).transpose()) * 0.5;
    let tech = BilinearTech::new(flow::to_dyn(&sigma), flow::to_dyn(&(path.rate * path.assignment)))?;
    let dec = bilinear::decompose(&tech);
    let same = |rows: &[[f64; 2]; 2], m: &DMatrix<f64>| (0..2).all(|i| (0..2).all(|j| rows[i][j] == m[(i, j)]));
    let first_ok = same(&first.realloc, &dec.realloc) && same(&first.earnings_slope_rate, &dec.earnings_slope);

    let (e1, e2, e3) = (flow_endpoint(50)?, flow_endpoint(100)?, flow_endpoint(200)?);
    let ratio = (e1 - e2).norm() / (e2 - e3).norm();
    let linear = ratio >= tol::FLOW_RATIO.0 && ratio <= tol::FLOW_RATIO.1;

    let still = TechPath::new(Matrix2::new(2.0, 0.3, 0.3, 1.0), Matrix2::zeros(), 1.0, 20)?;
    let traj = flow::integrate_flow(&still, &FlowRegime::Bilinear, &[[0.3, -0.2]])?;
    let s0 = &traj.steps[0];
    let constant = traj.steps.iter().all(|s| s.assignment == s0.assignment && s.earnings_slope == s0.earnings_slope)
        && traj.markers[0] == [0.3, -0.2];

    Ok((
        first_ok && linear && constant,
        format!("first step exact: {first_ok}; halving ratio {ratio:.3}; zero rate constant: {constant}"),
    ))
}

fn inference_round_trip(seed: u64) -> Check {
    let p = inference::TechParams::new(0.239, 0.0, 0.036)?;
    let rec = |w: f64, q: f64| WorkerRecord { occupation: "x".into(), earnings: w, q_ratio: q };
    let mut table = 0.0f64;
    for (w, q, c2, m2) in [
        (0.5, 1.0, 1.0 / (p.alpha + p.delta), 1.0 / (p.alpha + p.delta)),
        (1.0, 1.0, 2.0 / (p.alpha + p.delta), 2.0 / (p.alpha + p.delta)),
        (0.5, 2.0, 1.0 / (p.alpha + 4.0 * p.delta), 4.0 / (p.alpha + 4.0 * p.delta)),
    ] {
        let s = inference::infer_skills(&rec(w, q), &p)?;
        table = table.max((s.cognitive.powi(2) / c2 - 1.0).abs()).max((s.manual.powi(2) / m2 - 1.0).abs());
    }

    let truth = REFERENCE_PARAMS;
    let records = inference::synthesize_records(&truth, &SynthesisConfig::new(50, 200, seed))?;
    let skills = inference::infer_all(&records, &truth)?;
    let recon = records
        .iter()
        .zip(&skills)
        .map(|(r, s)| inference::reconstruction_residual(r, *s, &truth))
        .fold(0.0, f64::max);
    let targets = inference::occupation_moments(&records, &truth)?;
    let fit = inference::calibrate(&records, &targets, &CalibrationOptions::default())?;
    let rel = [
        (fit.params.alpha - truth.alpha) / truth.alpha,
        (fit.params.beta - truth.beta) / truth.beta,
        (fit.params.delta - truth.delta) / truth.delta,
    ];
    let worst_rel = rel.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let s = |lq: f64, w: f64| inference::infer_skills(&rec(w, lq.exp()), &truth);
    let (police, physicians) = (s(-0.1, 64.0)?, s(-0.2, 184.0)?);
    let ordinal = physicians.manual > police.manual && physicians.cognitive > police.cognitive;

    let passed = table <= tol::TABLE_ONE
        && worst_rel <= tol::CALIBRATION_RELATIVE
        && recon <= tol::RECONSTRUCTION
        && ordinal;
    Ok((
        passed,
        format!(
            "table rows rel err {table:.1e}; recovered ({:.4}, {:.4}, {:.4}) worst rel {worst_rel:.2e}; \
             reconstruction {recon:.1e}; ordering {ordinal}",
            fit.params.alpha, fit.params.beta, fit.params.delta
        ),
    ))
}

fn counterfactual_sanity(seed: u64) -> Check {
    let mut cfg = SynthesisConfig::new(50, 40, seed);
    cfg.exact_moments = true;
    let records = inference::synthesize_records(&REFERENCE_PARAMS, &cfg)?;
    let rate = 0.1;
    let run = counterfactual::run_from_records(&records, &CounterfactualConfig::new(REFERENCE_PARAMS, rate, rate))?;
    let g: &Arc<Grid> = run.input.grid();
    let a = run.input.tech_change();
    let mut manual = 0.0f64;
    let mut cognitive = 0.0f64;
    for (k, x) in g.points().enumerate() {
        manual = manual.max(a.at(k)[0].abs());
        cognitive = cognitive.max((a.at(k)[1] - (rate * x[0] + rate * x[1])).abs());
    }
    let ccw = run.rotation.counterclockwise();
    let passed = manual == 0.0 && cognitive <= tol::COUNTERFACTUAL_FIELD && ccw;
    Ok((
        passed,
        format!(
            "manual component max {manual:.1e}; cognitive component error {cognitive:.1e}; rotation at mode {:.3e} ({})",
            run.rotation.rotation,
            if ccw { "counterclockwise" } else { "clockwise" }
        ),
    ))
}

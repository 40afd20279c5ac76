//! Python bindings: closed-form and grid decompositions, skill inference,
//! exact assignment and the acceptance checks.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use helmsort::bilinear::{self, BilinearTech, TwoByTwo};
use helmsort::helmholtz::{self, Solver};
use helmsort::inference::{self, TechParams, WorkerRecord};
use helmsort::oracle;
use helmsort::scenario::Scenario;
use helmsort::validation;

fn to_py(e: helmsort::Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// Returns `{"R": .., "W": .., "theta": ..}` for `sigma`, `dsigma` given as nested lists.
#[pyfunction]
fn sylvester<'py>(py: Python<'py>, sigma: Vec<Vec<f64>>, dsigma: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let tech = BilinearTech::from_rows(&sigma, &dsigma).map_err(to_py)?;
    let dec = bilinear::decompose(&tech);
    let out = PyDict::new(py);
    out.set_item("R", bilinear::to_rows(&dec.realloc))?;
    out.set_item("W", bilinear::to_rows(&dec.earnings_slope))?;
    out.set_item("theta", dec.theta)?;
    Ok(out)
}

/// `θ = (γ̇ − β̇)/(α + δ)` for `Σ = [[α, β], [γ, δ]]`.
#[pyfunction]
fn rotation_angle_2d(sigma: [[f64; 2]; 2], dsigma: [[f64; 2]; 2]) -> PyResult<f64> {
    let two = |m: [[f64; 2]; 2]| TwoByTwo { alpha: m[0][0], beta: m[0][1], gamma: m[1][0], delta: m[1][1] };
    bilinear::rotation_angle_2d(&two(sigma), &two(dsigma)).map_err(to_py)
}

/// Runs a scenario given as JSON text. Relative paths resolve against `base_dir`.
#[pyfunction]
#[pyo3(signature = (scenario_json, base_dir = ".", solver = None, n = None))]
fn decompose<'py>(
    py: Python<'py>,
    scenario_json: &str,
    base_dir: &str,
    solver: Option<&str>,
    n: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut s = Scenario::from_json(scenario_json, base_dir).map_err(to_py)?;
    if let Some(n) = n {
        s.grid.n = n;
    }
    let mut opts = s.solver_options().map_err(to_py)?;
    match solver {
        Some("direct") => opts.solver = Solver::Direct,
        Some("penalized") => opts.solver = Solver::Penalized,
        Some(other) => return Err(PyValueError::new_err(format!("unknown solver {other:?}"))),
        None => {}
    }
    let input = s.build_input().map_err(to_py)?;
    let res = helmholtz::decompose(&input, &opts).map_err(to_py)?;
    let g = input.grid();
    let d = res.diagnostics;
    let diagnostics = PyDict::new(py);
    diagnostics.set_item("orthogonality", d.orthogonality)?;
    diagnostics.set_item("orthogonality_relative", d.orthogonality_relative)?;
    diagnostics.set_item("divergence_residual", d.divergence_residual)?;
    diagnostics.set_item("max_boundary_flux", d.max_boundary_flux)?;
    diagnostics.set_item("curl_residual", d.curl_residual)?;
    diagnostics.set_item("output_gain", d.output_gain)?;

    let out = PyDict::new(py);
    out.set_item("points", g.points().collect::<Vec<_>>())?;
    out.set_item("density", input.density().values().to_vec())?;
    out.set_item("tech_change", input.tech_change().values().to_vec())?;
    out.set_item("earnings_gradient", res.earnings_gradient.values().to_vec())?;
    out.set_item("reallocation", res.reallocation.values().to_vec())?;
    out.set_item("earnings_change", res.earnings_change.values().to_vec())?;
    out.set_item("dim", g.dim())?;
    out.set_item("diagnostics", diagnostics)?;
    Ok(out)
}

/// Returns `(x_m, x_c)` for one worker.
#[pyfunction]
fn infer_skills(earnings: f64, q_ratio: f64, alpha: f64, beta: f64, delta: f64) -> PyResult<(f64, f64)> {
    let params = TechParams::new(alpha, beta, delta).map_err(to_py)?;
    let record = WorkerRecord { occupation: "worker".into(), earnings, q_ratio };
    let s = inference::infer_skills(&record, &params).map_err(to_py)?;
    Ok((s.manual, s.cognitive))
}

/// Maximum-output perfect matching: `(permutation, total, duality_gap)`.
#[pyfunction]
fn solve_assignment(output: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64, f64)> {
    let sol = oracle::solve_assignment(&output).map_err(to_py)?;
    Ok((sol.permutation, sol.total, sol.duality_gap))
}

/// Runs the listed acceptance criteria (all when `None`) as `(id, name, passed, summary)` tuples.
#[pyfunction]
#[pyo3(signature = (criteria = None, seed = 0))]
fn validate(py: Python<'_>, criteria: Option<Vec<u8>>, seed: u64) -> Vec<(u8, String, bool, String)> {
    let ids = criteria.unwrap_or_else(|| (1..=12).collect());
    py.detach(|| {
        ids.into_iter()
            .map(|id| {
                let o = validation::run_criterion(id, seed);
                (o.id, o.name, o.passed, o.summary)
            })
            .collect()
    })
}

#[pymodule]
fn helmsort_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sylvester, m)?)?;
    m.add_function(wrap_pyfunction!(rotation_angle_2d, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(infer_skills, m)?)?;
    m.add_function(wrap_pyfunction!(solve_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}

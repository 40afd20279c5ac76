//! Skill inference from earnings and task intensities.
//!
//! Earnings are quadratic in skills, `2w = α x_c² + 2β x_c x_m + δ x_m²`, and
//! the relative skill level equals the occupation's relative task intensity,
//! `x_m / x_c = q`. Together they pin down both skills of every worker.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::helmholtz::normalize_density;

/// Coefficients of the earnings quadratic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TechParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

impl TechParams {
    /// Validated constructor: `α > 0`, `δ > 0` and `αδ > β²`.
    pub fn new(alpha: f64, beta: f64, delta: f64) -> Result<Self> {
        let p = Self { alpha, beta, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.alpha.is_finite() && self.beta.is_finite() && self.delta.is_finite();
        if !finite || self.alpha <= 0.0 || self.delta <= 0.0 || self.alpha * self.delta <= self.beta * self.beta {
            return Err(Error::InvalidTechnology(format!(
                "need alpha > 0, delta > 0 and alpha*delta > beta^2, got ({}, {}, {})",
                self.alpha, self.beta, self.delta
            )));
        }
        Ok(())
    }

    /// `α + 2βq + δq²`.
    pub fn denominator(&self, q: f64) -> f64 {
        self.alpha + 2.0 * self.beta * q + self.delta * q * q
    }

    /// Worker–worker matrix for skills ordered `(x_m, x_c)`.
    pub fn sigma(&self) -> Matrix2<f64> {
        Matrix2::new(self.delta, self.beta, self.beta, self.alpha)
    }

    /// `½(α x_c² + 2β x_c x_m + δ x_m²)`.
    pub fn earnings(&self, skills: Skills) -> f64 {
        let (m, c) = (skills.manual, skills.cognitive);
        0.5 * (self.alpha * c * c + 2.0 * self.beta * c * m + self.delta * m * m)
    }
}

/// Parameter values of the quantitative illustration.
pub const REFERENCE_PARAMS: TechParams = TechParams { alpha: 0.239, beta: 0.020, delta: 0.036 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRecord {
    pub occupation: String,
    pub earnings: f64,
    /// `q_m / q_c`.
    pub q_ratio: f64,
}

impl WorkerRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.occupation.trim().is_empty() {
            return Err("occupation is empty".into());
        }
        if !(self.earnings > 0.0 && self.earnings.is_finite()) {
            return Err(format!("earnings must be positive, got {}", self.earnings));
        }
        if !(self.q_ratio > 0.0 && self.q_ratio.is_finite()) {
            return Err(format!("task ratio must be positive, got {}", self.q_ratio));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Skills {
    pub manual: f64,
    pub cognitive: f64,
}

impl Skills {
    /// `[x_m, x_c]`.
    pub fn point(&self) -> [f64; 2] {
        [self.manual, self.cognitive]
    }
}

/// Inverts the earnings equation for one record.
pub fn infer_skills(record: &WorkerRecord, params: &TechParams) -> Result<Skills> {
    record.validate().map_err(|reason| Error::InvalidRecord { line: 0, reason })?;
    skills_from(record.earnings, record.q_ratio, params)
}

fn skills_from(w: f64, q: f64, params: &TechParams) -> Result<Skills> {
    let den = params.denominator(q);
    if !(den > 0.0) {
        return Err(Error::InvalidTechnology(format!("earnings quadratic is not positive at q = {q}")));
    }
    let cognitive = (2.0 * w / den).sqrt();
    Ok(Skills { manual: q * cognitive, cognitive })
}

/// Infers skills for all records. Errors carry the record's line in a CSV
/// with a header row.
pub fn infer_all(records: &[WorkerRecord], params: &TechParams) -> Result<Vec<Skills>> {
    params.validate()?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.validate().map_err(|reason| Error::InvalidRecord { line: i + 2, reason })?;
            skills_from(r.earnings, r.q_ratio, params)
        })
        .collect()
}

/// `|2w − (α x_c² + 2β x_c x_m + δ x_m²)| / 2w`.
pub fn reconstruction_residual(record: &WorkerRecord, skills: Skills, params: &TechParams) -> f64 {
    (params.earnings(skills) - record.earnings).abs() / record.earnings
}

/// Empirical quantile with linear interpolation between order statistics
/// (`p ∈ [0, 1]`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Clamps values below the `lower` and above the `upper` percentile.
pub fn winsorize(sample: &[f64], lower: f64, upper: f64) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0 <= lower && lower < upper && upper <= 100.0) {
        return Err(Error::InvalidInput(format!("percentiles must satisfy 0 <= {lower} < {upper} <= 100")));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile(&sorted, lower / 100.0);
    let hi = quantile(&sorted, upper / 100.0);
    Ok(sample.iter().map(|v| v.clamp(lo, hi)).collect())
}

/// Winsorizes each coordinate of a point cloud separately.
pub fn winsorize_points(points: &[[f64; 2]], lower: f64, upper: f64) -> Result<Vec<[f64; 2]>> {
    let xs = winsorize(&points.iter().map(|p| p[0]).collect::<Vec<_>>(), lower, upper)?;
    let ys = winsorize(&points.iter().map(|p| p[1]).collect::<Vec<_>>(), lower, upper)?;
    Ok(xs.into_iter().zip(ys).map(|(x, y)| [x, y]).collect())
}

/// Per-axis rule-of-thumb bandwidth `σ̂_k n^{-1/6}` for a two-dimensional
/// Gaussian product kernel.
pub fn silverman_bandwidth(points: &[[f64; 2]]) -> Result<[f64; 2]> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("kernel density needs at least two points".into()));
    }
    let n = points.len() as f64;
    let mut h = [0.0; 2];
    for (k, hk) in h.iter_mut().enumerate() {
        let mean = points.iter().map(|p| p[k]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        *hk = var.sqrt() * n.powf(-1.0 / 6.0);
    }
    if h.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidBandwidth);
    }
    Ok(h)
}

/// Gaussian product-kernel density estimate at the grid nodes, floored and
/// normalized to unit mass on the grid. Uses [`silverman_bandwidth`] when
/// `bandwidth` is `None`.
pub fn kde_density(points: &[[f64; 2]], bandwidth: Option<[f64; 2]>, grid: &Arc<Grid>) -> Result<ScalarField> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("kernel density needs at least two points".into()));
    }
    let h = match bandwidth {
        Some(h) => h,
        None => silverman_bandwidth(points)?,
    };
    let d = grid.dim();
    if h[..d].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidBandwidth);
    }
    let values = grid
        .points()
        .map(|x| {
            points
                .iter()
                .map(|p| {
                    let e: f64 = (0..d).map(|k| ((x[k] - p[k]) / h[k]).powi(2)).sum();
                    (-0.5 * e).exp()
                })
                .sum::<f64>()
        })
        .collect();
    normalize_density(&ScalarField::new(grid.clone(), values)?)
}

/// Cross-occupation moments of occupation-mean log skills.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean_of_log_manual_skill: f64,
    pub mean_of_log_cognitive_skill: f64,
    pub variance_of_log_manual_skill: f64,
    pub variance_of_log_cognitive_skill: f64,
    pub covariance_between_log_skills: f64,
}

impl Moments {
    pub fn to_array(&self) -> [f64; 5] {
        [
            self.mean_of_log_manual_skill,
            self.mean_of_log_cognitive_skill,
            self.variance_of_log_manual_skill,
            self.variance_of_log_cognitive_skill,
            self.covariance_between_log_skills,
        ]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            mean_of_log_manual_skill: a[0],
            mean_of_log_cognitive_skill: a[1],
            variance_of_log_manual_skill: a[2],
            variance_of_log_cognitive_skill: a[3],
            covariance_between_log_skills: a[4],
        }
    }
}

/// Model column of the quantitative illustration.
pub const REFERENCE_MOMENTS: Moments = Moments {
    mean_of_log_manual_skill: -0.039,
    mean_of_log_cognitive_skill: 0.129,
    variance_of_log_manual_skill: 0.263,
    variance_of_log_cognitive_skill: 0.393,
    covariance_between_log_skills: 0.257,
};

/// Means over workers within each occupation, then population moments of
/// those means across occupations.
pub fn occupation_moments(records: &[WorkerRecord], params: &TechParams) -> Result<Moments> {
    if records.is_empty() {
        return Err(Error::EmptySample);
    }
    let skills = infer_all(records, params)?;
    let mut groups: BTreeMap<&str, ([f64; 2], usize)> = BTreeMap::new();
    for (r, s) in records.iter().zip(&skills) {
        let e = groups.entry(r.occupation.as_str()).or_insert(([0.0; 2], 0));
        e.0[0] += s.manual.ln();
        e.0[1] += s.cognitive.ln();
        e.1 += 1;
    }
    let means: Vec<[f64; 2]> = groups.values().map(|(s, n)| [s[0] / *n as f64, s[1] / *n as f64]).collect();
    Ok(population_moments(&means))
}

fn population_moments(points: &[[f64; 2]]) -> Moments {
    let n = points.len() as f64;
    let mm = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let mc = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut vm, mut vc, mut cov) = (0.0, 0.0, 0.0);
    for p in points {
        let (a, b) = (p[0] - mm, p[1] - mc);
        vm += a * a;
        vc += b * b;
        cov += a * b;
    }
    Moments::from_array([mm, mc, vm / n, vc / n, cov / n])
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    pub start: TechParams,
    /// Weights of the squared moment gaps; all ones by default.
    pub weights: [f64; 5],
    pub max_iters: u64,
    /// Number of simplex restarts from the current best point.
    pub restarts: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { start: TechParams { alpha: 0.1, beta: 0.0, delta: 0.1 }, weights: [1.0; 5], max_iters: 2000, restarts: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: TechParams,
    pub moments: Moments,
    pub objective: f64,
    pub iterations: u64,
}

struct MomentGap<'a> {
    records: &'a [WorkerRecord],
    targets: [f64; 5],
    weights: [f64; 5],
}

impl MomentGap<'_> {
    fn params(z: &[f64]) -> TechParams {
        TechParams { alpha: z[0].exp(), beta: z[1], delta: z[2].exp() }
    }

    fn objective(&self, p: &TechParams) -> f64 {
        if p.validate().is_err() {
            return f64::INFINITY;
        }
        match occupation_moments(self.records, p) {
            Ok(m) => {
                m.to_array().iter().zip(&self.targets).zip(&self.weights).map(|((a, b), w)| w * (a - b).powi(2)).sum()
            }
            Err(_) => f64::INFINITY,
        }
    }
}

impl CostFunction for MomentGap<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, z: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.objective(&Self::params(z)))
    }
}

/// Moment-matching estimate of `(α, β, δ)` by a Nelder–Mead search over
/// `(ln α, β, ln δ)`; infeasible parameters have infinite cost.
pub fn calibrate(records: &[WorkerRecord], targets: &Moments, opts: &CalibrationOptions) -> Result<CalibrationResult> {
    if records.is_empty() {
        return Err(Error::EmptySample);
    }
    if targets.to_array().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("target moments must be finite".into()));
    }
    let problem = MomentGap { records, targets: targets.to_array(), weights: opts.weights };
    opts.start.validate().map_err(|e| Error::StartPoint(e.to_string()))?;
    let start_cost = problem.objective(&opts.start);
    if !start_cost.is_finite() {
        return Err(Error::StartPoint("objective is not finite at the start point".into()));
    }

    let mut best = vec![opts.start.alpha.ln(), opts.start.beta, opts.start.delta.ln()];
    let mut best_cost = start_cost;
    let mut iterations = 0;
    let mut scale = 0.25;
    for _ in 0..=opts.restarts {
        let simplex = initial_simplex(&best, scale, &problem);
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-14)
            .map_err(|e| Error::Optimizer(e.to_string()))?;
        let res = Executor::new(MomentGap { records, targets: problem.targets, weights: problem.weights }, solver)
            .configure(|s| s.max_iters(opts.max_iters))
            .run()
            .map_err(|e| Error::Optimizer(e.to_string()))?;
        let state = res.state();
        iterations += state.get_iter();
        if let Some(z) = state.get_best_param() {
            let c = state.get_best_cost();
            if c <= best_cost {
                best = z.clone();
                best_cost = c;
            }
        }
        scale *= 0.2;
    }
    let params = MomentGap::params(&best);
    Ok(CalibrationResult { params, moments: occupation_moments(records, &params)?, objective: best_cost, iterations })
}

/// Start point plus one step per coordinate, shrunk until each vertex is feasible.
fn initial_simplex(z: &[f64], scale: f64, problem: &MomentGap<'_>) -> Vec<Vec<f64>> {
    let mut simplex = vec![z.to_vec()];
    for k in 0..z.len() {
        let mut step = if k == 1 { scale * 0.1 } else { scale };
        loop {
            let mut v = z.to_vec();
            v[k] += step;
            if problem.objective(&MomentGap::params(&v)).is_finite() || step.abs() < 1e-12 {
                simplex.push(v);
                break;
            }
            step *= -0.5;
        }
    }
    simplex
}

/// Settings of the synthetic record generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub occupations: usize,
    pub workers_per_occupation: usize,
    pub seed: u64,
    /// Mean and covariance of occupation-mean `(log x_m, log x_c)`.
    pub target: Moments,
    /// Standard deviation of the worker-level common log-skill shift.
    pub worker_sd: f64,
    /// Recolor the occupation draws so their sample moments equal `target` exactly.
    pub exact_moments: bool,
}

impl SynthesisConfig {
    pub fn new(occupations: usize, workers_per_occupation: usize, seed: u64) -> Self {
        Self {
            occupations,
            workers_per_occupation,
            seed,
            target: REFERENCE_MOMENTS,
            worker_sd: 0.3,
            exact_moments: false,
        }
    }
}

/// Draws records whose skills under `params` have occupation-mean log skills
/// distributed as `cfg.target`. Workers within an occupation share the task
/// ratio and differ by a common log shift of both skills.
pub fn synthesize_records(params: &TechParams, cfg: &SynthesisConfig) -> Result<Vec<WorkerRecord>> {
    params.validate()?;
    if cfg.occupations == 0 || cfg.workers_per_occupation == 0 {
        return Err(Error::InvalidInput("occupation and worker counts must be positive".into()));
    }
    let t = cfg.target;
    let mean = Vector2::new(t.mean_of_log_manual_skill, t.mean_of_log_cognitive_skill);
    let cov = Matrix2::new(
        t.variance_of_log_manual_skill,
        t.covariance_between_log_skills,
        t.covariance_between_log_skills,
        t.variance_of_log_cognitive_skill,
    );
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("target covariance is not positive definite".into()))?
        .l();
    let shift = Normal::new(0.0, cfg.worker_sd).map_err(|e| Error::InvalidInput(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers: Vec<Vector2<f64>> = (0..cfg.occupations)
        .map(|_| {
            let z = Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            mean + chol * z
        })
        .collect();
    if cfg.exact_moments {
        recolor(&mut centers, &mean, &chol);
    }

    let mut records = Vec::with_capacity(cfg.occupations * cfg.workers_per_occupation);
    for (k, c) in centers.iter().enumerate() {
        let q = (c[0] - c[1]).exp();
        let mut e: Vec<f64> = (0..cfg.workers_per_occupation).map(|_| shift.sample(&mut rng)).collect();
        let avg = e.iter().sum::<f64>() / e.len() as f64;
        e.iter_mut().for_each(|v| *v -= avg);
        for ei in e {
            let skills = Skills { manual: (c[0] + ei).exp(), cognitive: (c[1] + ei).exp() };
            records.push(WorkerRecord { occupation: format!("occ{k:03}"), earnings: params.earnings(skills), q_ratio: q });
        }
    }
    Ok(records)
}

/// Affine map of the draws onto the exact target mean and population covariance.
fn recolor(points: &mut [Vector2<f64>], mean: &Vector2<f64>, target_chol: &Matrix2<f64>) {
    let n = points.len() as f64;
    let center = points.iter().sum::<Vector2<f64>>() / n;
    let cov = points.iter().map(|p| (p - center) * (p - center).transpose()).sum::<Matrix2<f64>>() / n;
    let map = cov.cholesky().and_then(|c| c.l().try_inverse()).map(|inv| target_chol * inv);
    for p in points.iter_mut() {
        *p = match map {
            Some(m) => mean + m * (*p - center),
            None => mean + (*p - center),
        };
    }
}

/// Reads `occupation,earnings,q_ratio` records. Errors report 1-based file lines.
pub fn read_records<R: Read>(input: R) -> Result<Vec<WorkerRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["occupation", "earnings", "q_ratio"] {
        return Err(Error::InvalidRecord {
            line: 1,
            reason: format!("expected header occupation,earnings,q_ratio, got {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<WorkerRecord>() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::InvalidRecord { line, reason: e.to_string() }
        })?;
        let line = out.len() + 2;
        row.validate().map_err(|reason| Error::InvalidRecord { line, reason })?;
        out.push(row);
    }
    if out.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(out)
}

pub fn write_records<W: Write>(records: &[WorkerRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

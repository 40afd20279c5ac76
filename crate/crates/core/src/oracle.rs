//! Exact discrete assignment on sampled points, used to check the continuous
//! comparative statics against brute force.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bilinear::{self, BilinearTech};
use crate::error::{Error, Result};
use crate::grid::{Grid, MatrixField, ScalarField, VectorField};
use crate::helmholtz;

/// Square output matrix `Y[i][j] = y(x_i, z_j)` with the points that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteInstance {
    pub workers: Vec<Vec<f64>>,
    pub jobs: Vec<Vec<f64>>,
    pub output: Vec<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl DiscreteInstance {
    /// Bilinear instance `Y[i][j] = x_iᵀ M z_j`.
    pub fn bilinear(workers: &[[f64; 2]], jobs: &[[f64; 2]], m: &DMatrix<f64>) -> Self {
        let output = workers
            .iter()
            .map(|x| {
                jobs.iter()
                    .map(|z| {
                        (0..2).map(|i| (0..2).map(|j| x[i] * m[(i, j)] * z[j]).sum::<f64>()).sum()
                    })
                    .collect()
            })
            .collect();
        Self {
            workers: workers.iter().map(|p| p.to_vec()).collect(),
            jobs: jobs.iter().map(|p| p.to_vec()).collect(),
            output,
            seed: None,
        }
    }
}

/// Maximum-weight perfect matching with dual prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSolution {
    /// Worker `i` is matched to job `permutation[i]`.
    pub permutation: Vec<usize>,
    pub total: f64,
    /// Worker prices, shifted to mean zero.
    pub worker_prices: Vec<f64>,
    pub job_prices: Vec<f64>,
    /// `Σw + Σv − total`.
    pub duality_gap: f64,
    /// `max(Y[i][j] − w_i − v_j)`; non-positive up to rounding.
    pub max_dual_violation: f64,
}

/// Solves the assignment problem by shortest augmenting paths with potentials.
///
/// Internally this minimizes `−Y`; prices are converted back so that
/// `w_i + v_j ≥ Y[i][j]` with equality on matched pairs.
pub fn solve_assignment(y: &[Vec<f64>]) -> Result<AssignmentSolution> {
    let n = y.len();
    if let Some(row) = y.iter().find(|r| r.len() != n) {
        return Err(Error::NonSquare { rows: n, cols: row.len() });
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("output matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(AssignmentSolution {
            permutation: Vec::new(),
            total: 0.0,
            worker_prices: Vec::new(),
            job_prices: Vec::new(),
            duality_gap: 0.0,
            max_dual_violation: 0.0,
        });
    }
    let cost = |i: usize, j: usize| -y[i - 1][j - 1];
    // 1-based arrays; column 0 is a virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut permutation = vec![0; n];
    for j in 1..=n {
        permutation[owner[j] - 1] = j - 1;
    }
    let total: f64 = permutation.iter().enumerate().map(|(i, &j)| y[i][j]).sum();
    let mut worker_prices: Vec<f64> = u[1..].iter().map(|x| -x).collect();
    let mut job_prices: Vec<f64> = v[1..].iter().map(|x| -x).collect();
    let shift = worker_prices.iter().sum::<f64>() / n as f64;
    worker_prices.iter_mut().for_each(|w| *w -= shift);
    job_prices.iter_mut().for_each(|p| *p += shift);
    let duality_gap = worker_prices.iter().sum::<f64>() + job_prices.iter().sum::<f64>() - total;
    let mut max_dual_violation = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            max_dual_violation = max_dual_violation.max(y[i][j] - worker_prices[i] - job_prices[j]);
        }
    }
    Ok(AssignmentSolution { permutation, total, worker_prices, job_prices, duality_gap, max_dual_violation })
}

/// Best permutation by exhaustive enumeration (Heap's algorithm); for small checks only.
pub fn enumerate_best(y: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = y.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let score = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| y[i][j]).sum::<f64>();
    let mut best = (perm.clone(), score(&perm));
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let s = score(&perm);
            if s > best.1 {
                best = (perm.clone(), s);
            }
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Direct re-optimization versus optimization over rearrangements of the initial matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RearrangementReport {
    pub initial: Vec<usize>,
    pub direct: Vec<usize>,
    /// `replacement[i]` is the worker who takes the job initially held by worker `i`.
    pub replacement: Vec<usize>,
    pub direct_output: f64,
    pub rearranged_output: f64,
    pub gap: f64,
    /// Whether the rearranged matching coincides with the direct one.
    pub same_matching: bool,
}

/// Solves the perturbed problem directly and as a rearrangement of the initial jobs.
pub fn verify_rearrangement_equivalence(y: &[Vec<f64>], perturbed: &[Vec<f64>]) -> Result<RearrangementReport> {
    let initial = solve_assignment(y)?.permutation;
    let direct = solve_assignment(perturbed)?;
    let n = initial.len();
    if perturbed.len() != n {
        return Err(Error::NonSquare { rows: perturbed.len(), cols: n });
    }
    // Row k, column i: worker k working the job initially held by worker i.
    let swapped: Vec<Vec<f64>> = (0..n).map(|k| (0..n).map(|i| perturbed[k][initial[i]]).collect()).collect();
    let rearr = solve_assignment(&swapped)?;
    let mut replacement = vec![0; n];
    for (k, &i) in rearr.permutation.iter().enumerate() {
        replacement[i] = k;
    }
    let composed: Vec<usize> = rearr.permutation.iter().map(|&i| initial[i]).collect();
    Ok(RearrangementReport {
        same_matching: composed == direct.permutation,
        gap: (direct.total - rearr.total).abs(),
        initial,
        direct: direct.permutation,
        replacement,
        direct_output: direct.total,
        rearranged_output: rearr.total,
    })
}

/// Output gains from re-optimizing after a small bilinear change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub t: Vec<f64>,
    /// Per-worker gain `G(t)/m`.
    pub gain: Vec<f64>,
    /// Least-squares fit of `gain ≈ c·t²`.
    pub coefficient: f64,
    /// `½∫(Ṙx)ᵀΣ(Ṙx) f` on the reference density.
    pub analytic: f64,
    pub max_duality_gap: f64,
}

/// Compares the realized second-order gain of re-optimization with the analytic one.
///
/// Jobs are the worker sample itself, which is the optimal initial assignment
/// when `Σ` is positive definite.
pub fn second_order_gain_check(
    sample: &[[f64; 2]],
    sigma: &DMatrix<f64>,
    dsigma: &DMatrix<f64>,
    ts: &[f64],
    reference: &ScalarField,
) -> Result<GainReport> {
    let tech = BilinearTech::new(sigma.clone(), dsigma.clone())?;
    if tech.dim() != 2 {
        return Err(Error::UnsupportedDimension(tech.dim()));
    }
    let m = sample.len() as f64;
    let mut gain = Vec::with_capacity(ts.len());
    let mut max_gap = 0.0f64;
    for &t in ts {
        let mt = sigma + dsigma * t;
        let inst = DiscreteInstance::bilinear(sample, sample, &mt);
        let frozen: f64 = (0..sample.len()).map(|i| inst.output[i][i]).sum();
        let sol = solve_assignment(&inst.output)?;
        max_gap = max_gap.max(sol.duality_gap.abs());
        gain.push((sol.total - frozen) / m);
    }
    let num: f64 = ts.iter().zip(&gain).map(|(t, g)| g * t * t).sum();
    let den: f64 = ts.iter().map(|t| t.powi(4)).sum();
    let coefficient = if den > 0.0 { num / den } else { 0.0 };

    let r = bilinear::solve_sylvester(&tech);
    let g = reference.grid();
    let field = VectorField::from_fn(g, |x| [r[(0, 0)] * x[0] + r[(0, 1)] * x[1], r[(1, 0)] * x[0] + r[(1, 1)] * x[1]]);
    let c = MatrixField::constant(g, &[sigma[(0, 0)], sigma[(0, 1)], sigma[(1, 0)], sigma[(1, 1)]])?;
    let f = helmholtz::normalize_density(reference)?;
    let analytic = helmholtz::output_gain(&field, &c, &f)?;
    Ok(GainReport { t: ts.to_vec(), gain, coefficient, analytic, max_duality_gap: max_gap })
}

/// Uniform density on the unit disk, for the analytic side of [`second_order_gain_check`].
pub fn uniform_disk_density(n: usize) -> Result<ScalarField> {
    let g = Grid::disk([0.0, 0.0], 1.0, n)?;
    Ok(ScalarField::constant(&g, 1.0))
}

/// `m` points drawn uniformly from the unit disk.
pub fn uniform_disk<R: Rng>(rng: &mut R, m: usize) -> Vec<[f64; 2]> {
    (0..m)
        .map(|_| {
            let r = rng.random::<f64>().sqrt();
            let a = 2.0 * PI * rng.random::<f64>();
            [r * a.cos(), r * a.sin()]
        })
        .collect()
}

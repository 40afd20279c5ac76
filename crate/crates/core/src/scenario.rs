//! Scenario files and the tabular outputs of a decomposition run.
//!
//! ```json
//! {
//!   "grid": {"shape": "disk", "n": 64, "radius": 1.0},
//!   "density": {"type": "gaussian", "sigma": 0.2},
//!   "technology": {"type": "bilinear", "sigma": [[1, 0], [0, 1]], "dsigma": [[0, 1], [0, 0]]},
//!   "solver": "direct"
//! }
//! ```
//!
//! Relative file paths are resolved against the scenario file's directory.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bilinear::{self, BilinearTech};
use crate::error::{Error, Result};
use crate::flow::{FlowTrajectory, TechPath};
use crate::grid::io::{read_matrix, read_scalar, read_vector, write_node_table};
use crate::grid::{Grid, MatrixField, ScalarField, VectorField};
use crate::helmholtz::{DecompositionInput, DecompositionResult, Solver, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Rect,
    Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub shape: ShapeKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
    /// `[[lo, hi]]` per axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Arc<Grid>> {
        match self.shape {
            ShapeKind::Disk => Grid::disk(self.center.unwrap_or([0.0, 0.0]), self.radius.unwrap_or(1.0), self.n),
            ShapeKind::Rect => {
                let b = self.bounds.clone().unwrap_or_else(|| vec![[0.0, 1.0], [0.0, 1.0]]);
                if b.len() != 2 {
                    return Err(Error::InvalidGrid("rect bounds need two [lo, hi] pairs".into()));
                }
                Grid::rect([b[0][0], b[1][0]], [b[0][1], b[1][1]], [self.n, self.n])
            }
            ShapeKind::Interval => {
                let b = self.bounds.clone().unwrap_or_else(|| vec![[0.0, 1.0]]);
                if b.len() != 1 {
                    return Err(Error::InvalidGrid("interval bounds need one [lo, hi] pair".into()));
                }
                Grid::interval(b[0][0], b[0][1], self.n)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DensitySpec {
    Uniform,
    /// Isotropic Gaussian truncated to the domain.
    Gaussian {
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<[f64; 2]>,
    },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum TechnologySpec {
    /// Constant `C = Σ` and `Ȧ(x) = Σ̇x`.
    Bilinear { sigma: Vec<Vec<f64>>, dsigma: Vec<Vec<f64>> },
    Fields {
        #[serde(rename = "C")]
        c: PathBuf,
        #[serde(rename = "A")]
        a: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    #[serde(rename = "M0")]
    pub m0: [[f64; 2]; 2],
    #[serde(rename = "Mdot")]
    pub mdot: [[f64; 2]; 2],
    #[serde(rename = "T")]
    pub horizon: f64,
    pub steps: usize,
    /// Initial assignment, identity by default.
    #[serde(rename = "T0", default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<[[f64; 2]; 2]>,
}

impl PathSpec {
    pub fn build(&self) -> Result<TechPath> {
        let m = crate::flow::matrix_from_rows;
        let t0 = self.assignment.as_ref().map(m).unwrap_or_else(nalgebra::Matrix2::identity);
        TechPath::with_assignment(m(&self.m0), m(&self.mdot), t0, self.horizon, self.steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub grid: GridSpec,
    pub density: DensitySpec,
    pub technology: TechnologySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fdot: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<Solver>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathSpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut s: Scenario = serde_json::from_str(text)?;
        s.base_dir = base_dir.into();
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn open(&self, p: &Path) -> Result<BufReader<File>> {
        let full = self.resolve(p);
        File::open(&full)
            .map(BufReader::new)
            .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", full.display())))
    }

    pub fn solver_options(&self) -> Result<SolverOptions> {
        if let Some(psi) = self.psi {
            if !(psi > 0.0 && psi.is_finite()) {
                return Err(Error::InvalidInput(format!("psi must be positive, got {psi}")));
            }
        }
        Ok(SolverOptions { solver: self.solver.unwrap_or_default(), psi: self.psi, ..SolverOptions::default() })
    }

    /// The bilinear technology, when the scenario has one.
    pub fn bilinear(&self) -> Result<Option<BilinearTech>> {
        match &self.technology {
            TechnologySpec::Bilinear { sigma, dsigma } => Ok(Some(BilinearTech::from_rows(sigma, dsigma)?)),
            TechnologySpec::Fields { .. } => Ok(None),
        }
    }

    pub fn density_field(&self, grid: &Arc<Grid>) -> Result<ScalarField> {
        match &self.density {
            DensitySpec::Uniform => Ok(ScalarField::constant(grid, 1.0)),
            DensitySpec::Gaussian { sigma, center } => {
                if !(*sigma > 0.0) {
                    return Err(Error::InvalidInput("gaussian sigma must be positive".into()));
                }
                let c = center.unwrap_or_else(|| default_center(grid));
                Ok(ScalarField::from_fn(grid, |x| {
                    let r2: f64 = (0..grid.dim()).map(|k| (x[k] - c[k]).powi(2)).sum();
                    (-0.5 * r2 / (sigma * sigma)).exp()
                }))
            }
            DensitySpec::File { path } => read_scalar(grid, self.open(path)?),
        }
    }

    /// Grid, validated fields and optional density change.
    pub fn build_input(&self) -> Result<DecompositionInput> {
        let grid = self.grid.build()?;
        let f = self.density_field(&grid)?;
        let (c, a) = match &self.technology {
            TechnologySpec::Bilinear { sigma, dsigma } => bilinear_fields(&grid, &BilinearTech::from_rows(sigma, dsigma)?)?,
            TechnologySpec::Fields { c, a } => (read_matrix(&grid, self.open(c)?)?, read_vector(&grid, self.open(a)?)?),
        };
        let mut input = DecompositionInput::new(f, c, a)?;
        if let Some(p) = &self.fdot {
            input = input.with_density_change(read_scalar(&grid, self.open(p)?)?)?;
        }
        Ok(input)
    }
}

fn default_center(grid: &Grid) -> [f64; 2] {
    match grid.shape() {
        crate::grid::Shape::Disk { center, .. } => *center,
        crate::grid::Shape::Rect { lo, hi } => [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])],
        crate::grid::Shape::Interval { lo, hi } => [0.5 * (lo + hi), 0.0],
    }
}

/// `C = Σ` and `Ȧ = Σ̇x` on the grid; `Σ` must match the grid dimension.
pub fn bilinear_fields(grid: &Arc<Grid>, tech: &BilinearTech) -> Result<(MatrixField, VectorField)> {
    let d = grid.dim();
    if tech.dim() != d {
        return Err(Error::Dimension { expected: d, found: tech.dim() });
    }
    let s = tech.sigma();
    let ds = tech.dsigma();
    let c = MatrixField::constant(grid, s.as_slice())?;
    let a = VectorField::from_fn(grid, |x| {
        let mut out = [0.0; 2];
        for i in 0..d {
            out[i] = (0..d).map(|j| ds[(i, j)] * x[j]).sum();
        }
        out
    });
    Ok((c, a))
}

/// `Ẇx` and `Ṙx` on the grid for a bilinear technology.
pub fn closed_form_fields(grid: &Arc<Grid>, tech: &BilinearTech) -> (VectorField, VectorField) {
    let dec = bilinear::decompose(tech);
    let d = grid.dim();
    let lin = |m: &nalgebra::DMatrix<f64>| {
        VectorField::from_fn(grid, |x| {
            let mut out = [0.0; 2];
            for i in 0..d {
                out[i] = (0..d).map(|j| m[(i, j)] * x[j]).sum();
            }
            out
        })
    };
    (lin(&dec.earnings_slope), lin(&dec.realloc))
}

pub const FIELDS_HEADER: [&str; 10] = ["x1", "x2", "f", "A1", "A2", "v1", "v2", "r1", "r2", "wdot"];

/// Writes `x1,x2,f,A1,A2,v1,v2,r1,r2,wdot`; second components are zero on intervals.
pub fn write_fields<W: Write>(input: &DecompositionInput, res: &DecompositionResult, out: W) -> Result<()> {
    let comps = |v: &VectorField| -> (Vec<f64>, Vec<f64>) {
        let c1 = v.component(0);
        let c2 = if v.dim() > 1 { v.component(1) } else { vec![0.0; c1.len()] };
        (c1, c2)
    };
    let (a1, a2) = comps(input.tech_change());
    let (v1, v2) = comps(&res.earnings_gradient);
    let (r1, r2) = comps(&res.reallocation);
    write_node_table(
        input.grid(),
        &FIELDS_HEADER,
        &[input.density().values(), &a1, &a2, &v1, &v2, &r1, &r2, res.earnings_change.values()],
        out,
    )
}

pub const TRAJECTORY_HEADER: [&str; 9] = ["t", "T11", "T12", "T21", "T22", "W11", "W12", "W22", "defect"];

/// Writes one row per step: `t,T11,T12,T21,T22,W11,W12,W22,defect`.
pub fn write_trajectory<W: Write>(traj: &FlowTrajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for s in &traj.steps {
        let (t, m) = (s.assignment, s.earnings_slope);
        let row = [s.t, t[0][0], t[0][1], t[1][0], t[1][1], m[0][0], m[0][1], m[1][1], s.defect];
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

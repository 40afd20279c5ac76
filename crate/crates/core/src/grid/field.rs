use std::sync::Arc;

use nalgebra::DMatrix;

use super::Grid;
use crate::error::{Error, Result};

/// One real value per active node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), found: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = grid.points().map(f).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One `dim`-vector per active node, stored node by node.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        let expected = grid.len() * grid.dim();
        if values.len() != expected {
            return Err(Error::Dimension { expected, found: values.len() });
        }
        Ok(Self { grid, values })
    }

    /// Evaluates `f` at every node; only the first `dim` components are kept.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let d = grid.dim();
        let mut values = Vec::with_capacity(grid.len() * d);
        for x in grid.points() {
            values.extend_from_slice(&f(x)[..d]);
        }
        Self { grid: grid.clone(), values }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.len() * grid.dim()] }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn at(&self, a: usize) -> &[f64] {
        let d = self.dim();
        &self.values[a * d..(a + 1) * d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.values.iter().skip(k).step_by(self.dim()).copied().collect()
    }

    /// Pointwise linear combination `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &VectorField, b: f64) -> Result<VectorField> {
        super::ensure_same(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(Self { grid: self.grid.clone(), values })
    }
}

/// One `dim × dim` matrix per active node, stored row-major node by node.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    grid: Arc<Grid>,
    values: Vec<f64>,
    spd: bool,
}

impl MatrixField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        let d = grid.dim();
        let expected = grid.len() * d * d;
        if values.len() != expected {
            return Err(Error::Dimension { expected, found: values.len() });
        }
        Ok(Self { grid, values, spd: false })
    }

    /// Builds a field and checks every node is symmetric positive definite.
    pub fn new_spd(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        let mut field = Self::new(grid, values)?;
        for a in 0..field.grid.len() {
            check_spd(field.at(a), field.dim()).map_err(|reason| {
                Error::InvalidField(format!("matrix at node {a} is {reason}"))
            })?;
        }
        field.spd = true;
        Ok(field)
    }

    /// The same row-major `dim × dim` matrix at every node.
    pub fn constant(grid: &Arc<Grid>, m: &[f64]) -> Result<Self> {
        let d = grid.dim();
        if m.len() != d * d {
            return Err(Error::Dimension { expected: d * d, found: m.len() });
        }
        let values = m.iter().copied().cycle().take(grid.len() * d * d).collect();
        Self::new_spd(grid.clone(), values)
    }

    pub fn identity(grid: &Arc<Grid>) -> Self {
        let d = grid.dim();
        let m: Vec<f64> = (0..d * d).map(|k| if k % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
        Self::constant(grid, &m).expect("identity is SPD")
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn is_spd(&self) -> bool {
        self.spd
    }

    pub fn at(&self, a: usize) -> &[f64] {
        let d2 = self.dim() * self.dim();
        &self.values[a * d2..(a + 1) * d2]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_spd(m: &[f64], d: usize) -> std::result::Result<(), &'static str> {
    let mat = DMatrix::from_row_slice(d, d, m);
    let scale = mat.amax().max(f64::MIN_POSITIVE);
    if (&mat - mat.transpose()).amax() > 1e-10 * scale.max(1.0) {
        return Err("not symmetric");
    }
    let eig = mat.symmetric_eigenvalues();
    if eig.iter().any(|&l| !(l > 0.0)) {
        return Err("not positive definite");
    }
    Ok(())
}

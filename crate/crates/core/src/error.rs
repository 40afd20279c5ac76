use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("fields are defined on different grids")]
    GridMismatch,

    #[error("operation not supported in dimension {0}")]
    UnsupportedDimension(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid technology: {0}")]
    InvalidTechnology(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDivergence { iterations: usize, residual: f64 },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("density change does not integrate to zero (integral {integral:e})")]
    Compatibility { integral: f64 },

    #[error("field is not a gradient (relative curl residual {residual:e})")]
    NotAGradient { residual: f64 },

    #[error("invalid record at line {line}: {reason}")]
    InvalidRecord { line: usize, reason: String },

    #[error("empty sample")]
    EmptySample,

    #[error("bandwidth must be positive")]
    InvalidBandwidth,

    #[error("infeasible starting point: {0}")]
    StartPoint(String),

    #[error("path breakdown at t = {t}: worker-worker matrix is no longer positive definite")]
    PathBreakdown { t: f64 },

    #[error("instance is not square: {rows} x {cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error comes from a numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SolverDivergence { .. }
                | Error::Assembly(_)
                | Error::PathBreakdown { .. }
                | Error::Optimizer(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

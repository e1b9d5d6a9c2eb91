use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("matrix must be square with dimension >= 1, got {rows}x{cols}")]
    BadShape { rows: usize, cols: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("eigensolver did not converge")]
    NoConvergence,

    #[error("threshold must be nonnegative, got {0}")]
    NegativeThreshold(f64),

    #[error("prox step must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("weights must be entrywise positive, found {0}")]
    NonPositiveWeight(f64),

    #[error("weighted prox inner solver stalled after {iters} iterations (residual {residual:e})")]
    InnerNoConvergence { iters: usize, residual: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error("dual point is infeasible: {0}")]
    InfeasibleDual(String),

    #[error("could not build a feasible dual point after {0} halvings")]
    DualConstructionFailed(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step size {0} is outside the admissible range")]
    StepOutOfRange(f64),

    #[error("line search stalled after {0} reductions")]
    LineSearchStalled(usize),

    #[error("metric is not positive definite at stage {stage}: alpha must be < beta entrywise")]
    InvalidMetric { stage: usize },

    #[error("training loss became non-finite at stage {stage}")]
    NonFiniteLoss { stage: usize },

    #[error("structure specification violated: {0}")]
    SpecViolation(String),

    #[error("truth matrix is not positive definite")]
    TruthNotPD,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

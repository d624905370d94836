use thiserror::Error;

/// Errors raised by measure construction, file IO and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("unsupported exponent p = {0} (need p >= 1)")]
    UnsupportedExponent(f64),

    #[error("measure has zero total mass")]
    ZeroMass,

    #[error("measure is not normalized (total mass {0})")]
    NotNormalized(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("marginals are infeasible: total masses {row} vs {col}")]
    InfeasibleMarginals { row: f64, col: f64 },

    #[error("cost matrix has a non-finite entry at ({0}, {1})")]
    InvalidCost(usize, usize),

    #[error("kernel product underflowed at index {0}; use the log-domain iteration")]
    Underflow(usize),

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("operator is not ready: {0}")]
    State(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite_nonneg(values: &[f64], what: &str) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("{what}[{i}] is not finite")));
        }
        if v < 0.0 {
            return Err(Error::InvalidInput(format!(
                "{what}[{i}] = {v} is negative"
            )));
        }
    }
    Ok(())
}

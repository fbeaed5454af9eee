use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value {value} at cell {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("negative density {value} at cell {index}")]
    NegativeDensity { index: usize, value: f64 },

    #[error("density has zero mass")]
    ZeroMass,

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("time step {dt} exceeds the CFL bound; admissible dt <= {admissible}")]
    Cfl { dt: f64, admissible: f64 },

    #[error("linear solver did not converge after {iterations} iterations (residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

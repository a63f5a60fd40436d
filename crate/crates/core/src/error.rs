//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A scenario, field, or solver was configured inconsistently.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Boundary geometry is degenerate at the queried point.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// An argument violates a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The ODE integrator could not continue (step-size underflow etc.).
    #[error("integration error: {0}")]
    Integration(String),

    /// Terminal/running data could not be evaluated where required.
    #[error("data error: {0}")]
    Data(String),

    /// Two grid functions with incompatible metadata were combined.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Explicit transport step exceeds the stability limit.
    #[error("CFL violation: dt = {dt:e} exceeds the admissible dt = {admissible:e}")]
    Cfl { dt: f64, admissible: f64 },

    /// Iterative linear solve failed to reach its tolerance.
    #[error("linear solve did not converge: {0}")]
    LinearSolve(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by validation, numerics and scenario handling.
#[derive(Debug, Error)]
pub enum Error {
    /// Structural validation failure (graph, cost model, bounds, gains).
    #[error("validation error: {0}")]
    Validation(String),

    /// Vector/matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A linear system has no solution within tolerance.
    #[error("inconsistent system: residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    Inconsistent { residual: f64, tol: f64 },

    /// A matrix that must be invertible is numerically singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Non-finite value encountered where finite data is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The feasibility condition on steady-state inputs is violated.
    #[error("feasibility condition violated: {0}")]
    Infeasible(String),

    /// A synthesized or supplied gain set violates its admissibility bounds.
    #[error("gain bound violated: {0}")]
    GainBound(String),

    /// Time point outside the scenario schedule.
    #[error("time {0} s is outside the scenario schedule")]
    OutsideSchedule(f64),

    /// Simulation state stopped being finite.
    #[error("numerical blow-up at t = {0} s: state is no longer finite")]
    BlowUp(f64),

    /// Scenario file parse failure (with location when available).
    #[error("scenario parse error: {0}")]
    Parse(String),

    /// I/O failure while reading or writing artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

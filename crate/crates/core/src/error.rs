use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MicpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MicpError {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("domain has no active cells")]
    EmptyDomain,

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("state invariant violated: {0}")]
    InvariantViolation(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("newton failed to converge in {iterations} iterations (scaled residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("time step {dt:.3e} s fell below the minimum {dt_min:.3e} s at t = {time:.6e} s")]
    TimestepTooSmall { time: f64, dt: f64, dt_min: f64 },

    #[error("time {time:.6e} s lies outside the schedule (0, {end:.6e}]")]
    OutOfRange { time: f64, end: f64 },

    #[error("batch oracle went unstable at t = {0:.6e} s")]
    OracleFailure(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("solver failed at t = {time:.6e} s: {source}")]
    SolverFailure {
        time: f64,
        #[source]
        source: Box<MicpError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl MicpError {
    /// Newton non-convergence is recoverable by cutting the time step.
    pub fn is_retryable(&self) -> bool {
        matches!(self, MicpError::NonConvergence { .. } | MicpError::LinearSolve(_))
    }

    /// True for breakdowns of a solver run, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            MicpError::SolverFailure { .. }
                | MicpError::TimestepTooSmall { .. }
                | MicpError::NonConvergence { .. }
                | MicpError::LinearSolve(_)
                | MicpError::InvariantViolation(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MicpError::Io {
            path: path.into(),
            source,
        }
    }
}

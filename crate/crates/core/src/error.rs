//! Error type shared by the solvers, the simulator and the oracles.

/// Errors produced by configuration validation and the numerical solvers.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A configuration value violates its domain (negative rate, bad weights, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The anti-diagonal series hit `max_diagonal` before the stopping rule fired.
    #[error(
        "series did not converge within {max_diagonal} diagonals \
         (last relative diagonal weight {last_ratio:.3e})"
    )]
    NonConvergence { max_diagonal: usize, last_ratio: f64 },

    /// The boundary linear system has no clean one-dimensional null space.
    #[error("boundary system solve failed: {0}")]
    BoundarySolve(String),

    /// A solve finished but produced values outside their feasible region,
    /// which signals that the truncation was too coarse.
    #[error("solution failed validation: {0}")]
    InvalidSolution(String),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by game construction, simulation, polytope geometry,
/// projections, linear programs, and the episodic learner.
#[derive(Debug, Error)]
pub enum Error {
    /// An index or argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A row that must be a probability distribution is not one.
    #[error("row {row} is not a probability distribution (sum {sum}, min {min})")]
    NonStochasticRow { row: usize, sum: f64, min: f64 },

    /// A Markov kernel has no unique stationary distribution.
    #[error("non-ergodic kernel: {0}")]
    NonErgodic(String),

    /// The shrunk occupation polytope has no feasible point.
    #[error("shrunk polytope for player {player} with lower bound {delta} is empty")]
    EmptyShrunkPolytope { player: usize, delta: f64 },

    /// No grid value satisfies the shrink-distance certificate.
    #[error(
        "no lower-bound grid value certifies a vertex distance of {target} \
         for player {player}; increase the accuracy parameter epsilon"
    )]
    DeltaGridExhausted { player: usize, target: f64 },

    /// Exact oracles refused to enumerate an oversized joint space.
    #[error("joint enumeration size {size} exceeds cap {cap}")]
    EnumerationTooLarge { size: u128, cap: u128 },

    /// A batch exceeded the configured cover-time cap.
    #[error("batch {episode} exceeded the length cap ({len} sampling steps > cap {cap})")]
    BatchCapExceeded { episode: usize, len: usize, cap: usize },

    /// An iterative numerical routine failed to reach its tolerance.
    #[error("{routine} did not converge: residual {residual}")]
    Numerical { routine: &'static str, residual: f64 },

    /// A linear program turned out infeasible.
    #[error("linear program infeasible (phase-1 objective {infeasibility})")]
    LpInfeasible { infeasibility: f64 },

    /// Checkpoint/config mismatch or malformed persisted state.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

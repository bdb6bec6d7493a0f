use thiserror::Error;

use crate::geometry::Polytope;
use crate::mpc::MpcStatus;
use crate::sim::SimLog;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("set is unbounded in the requested direction")]
    Unbounded,

    #[error("set is empty")]
    Empty,

    #[error("linear map is singular beyond regularization")]
    SingularMap,

    /// The invariant-set iteration hit its cap. `last` is the final iterate,
    /// which is not certified invariant.
    #[error("fixed-point iteration did not converge in {iterations} iterations")]
    NotConverged {
        iterations: usize,
        last: Box<Polytope>,
    },

    #[error("measurement violates the assumed Lipschitz constant: {0}")]
    LipschitzViolation(String),

    #[error("measurements are inconsistent with the assumed Lipschitz constant: {0}")]
    ModelInconsistent(String),

    #[error("no certified uncertainty ellipsoid: {0}")]
    NoEnvelope(String),

    #[error("conic solver failure: {0}")]
    SolverFailure(String),

    #[error("reachable tube is empty at prediction step {step}")]
    EmptyTube { step: usize },

    #[error("uncertainty set at prediction step {step} is unbounded")]
    UnboundedUncertainty { step: usize },

    #[error("Riccati recursion diverged; (A, B) is not stabilizable")]
    Unstabilizable,

    #[error("exploration budget of {steps} steps exhausted with an empty terminal set")]
    ExplorationBudgetExhausted {
        steps: usize,
        /// Last global uncertainty bound, for diagnosis.
        bound: Option<Box<Polytope>>,
    },

    #[error("MPC feasibility lost at control step {step} ({status:?})")]
    FeasibilityLost {
        step: usize,
        status: MpcStatus,
        log: Box<SimLog>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

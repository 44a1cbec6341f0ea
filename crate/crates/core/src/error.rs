use crate::hybrid::SimulationFailure;
use crate::numerics::NumericError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numeric(#[from] NumericError),

    /// The plant left the class it was declared in (e.g. f2 vanished).
    #[error("structural violation: {what} at {at:?}")]
    Structural { what: String, at: Vec<f64> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("search failed: {reason}; last counterexample {counterexample:?}")]
    SearchFailed { reason: String, counterexample: Vec<f64> },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("LMI system appears infeasible (best violation {best_violation:e} after {iterations} iterations)")]
    InfeasibilitySuspected { best_violation: f64, iterations: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("validation failed: {what}; value {value} at {sample:?}")]
    Validation { what: String, value: f64, sample: Vec<f64> },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error(transparent)]
    Simulation(#[from] Box<SimulationFailure>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Trajectories and predictions do not line up by id or dimension.
    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The simplex ran past its iteration cap. Distinct from infeasibility.
    #[error("simplex iteration limit of {limit} pivots exceeded")]
    IterationLimit { limit: usize },

    /// Branch-and-bound ran out of nodes. The best solution found so far, if
    /// any, is attached.
    #[error("branch-and-bound node limit of {limit} exhausted (incumbent: {})",
        incumbent_objective.map_or_else(|| "none".to_string(), |v| v.to_string()))]
    NodeLimit {
        limit: usize,
        incumbent_objective: Option<f64>,
        incumbent_x: Option<Vec<f64>>,
    },

    #[error("optimization problem is infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported problem size: {0}")]
    Unsupported(String),

    /// Calibration data came from the wrong split.
    #[error("data provenance violation: {0}")]
    Provenance(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

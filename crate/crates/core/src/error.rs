use thiserror::Error;

use crate::equilibrium::EquilibriumResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("conditioning event has zero probability")]
    ZeroConditioningEvent,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("wealth {wealth} is not above -W0 = {floor} in state {state}")]
    InfeasibleWealth { state: usize, wealth: f64, floor: f64 },

    #[error("demand is unbounded: {0}")]
    UnboundedDemand(String),

    #[error("infeasible problem: {0}")]
    InfeasibleProblem(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Option<Box<EquilibriumResult>>,
    },

    #[error("market has no DAG structure")]
    MissingStructure,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error at {}{path}: {message}", line.map(|l| format!("line {l}, ")).unwrap_or_default())]
    Validation {
        path: String,
        /// Source line of the offending value, when the document text is known.
        line: Option<usize>,
        message: String,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            line: None,
            message: message.into(),
        }
    }
}

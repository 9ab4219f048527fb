use thiserror::Error;

use crate::boxvi::SolveStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure{}: {message}", scenario.map(|j| format!(" in scenario {j}")).unwrap_or_default())]
    Numerical {
        scenario: Option<usize>,
        message: String,
    },

    #[error("no active-set assignment satisfies the optimality conditions")]
    Infeasible,

    #[error("multiple distinct solutions found (max disagreement {0:e})")]
    NonUnique(f64),

    #[error("inner solve for scenario {scenario} ended with status {status:?} (residual {residual:e})")]
    InnerSolve {
        scenario: usize,
        status: SolveStatus,
        residual: f64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(scenario: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Numerical {
            scenario,
            message: msg.into(),
        }
    }
}

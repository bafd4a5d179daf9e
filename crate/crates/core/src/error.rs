use thiserror::Error;

use crate::protocol::Transcript;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("curvature matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("curvature matrix is not strictly convex: smallest eigenvalue {min_eigenvalue:e} below floor {floor:e}")]
    NotStrictlyConvex { min_eigenvalue: f64, floor: f64 },

    #[error("coupling matrix is rank deficient: rank {rank} < {rows} rows")]
    RankDeficient { rank: usize, rows: usize },

    #[error("point is infeasible: constraint residual {residual:e}")]
    Infeasible { residual: f64 },

    #[error("communication graph is not a tree: {0}")]
    NotATree(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("reduced problem without agent {agent} has no solution: {reason}")]
    ReducedProblem { agent: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed report from agent {agent} in round {round}: {reason}")]
    MalformedReport {
        agent: usize,
        round: usize,
        reason: String,
    },

    #[error("strategy of agent {agent} failed: {message}")]
    Strategy { agent: usize, message: String },

    #[error("no termination within {rounds} rounds")]
    NonConvergence {
        rounds: usize,
        transcript: Box<Transcript>,
    },

    #[error("replay diverged at round {round}: {detail}")]
    ReplayMismatch { round: usize, detail: String },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }

    /// True for failures caused by a run that did not reach its stopping rule.
    pub fn is_non_convergence(&self) -> bool {
        matches!(self, Error::NonConvergence { .. })
    }

    /// True for failures in the inputs rather than in a mechanism run.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::NonFinite(_)
                | Error::NotSymmetric { .. }
                | Error::NotStrictlyConvex { .. }
                | Error::RankDeficient { .. }
                | Error::NotATree(_)
                | Error::Config(_)
                | Error::Scenario(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

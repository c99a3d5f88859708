//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    Data(String),

    #[error("{path}:{line}: malformed row: {msg}")]
    MalformedRow {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: {what} {value} out of range (must be < {bound})")]
    OutOfRange {
        path: String,
        line: usize,
        what: &'static str,
        value: usize,
        bound: usize,
    },

    #[error("{path}: duplicate (task, worker) pair ({task}, {worker}) at rows {first_line} and {second_line}")]
    DuplicatePair {
        path: String,
        task: usize,
        worker: usize,
        first_line: usize,
        second_line: usize,
    },

    #[error("invalid prior: {0}")]
    Prior(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset has no features but the algorithm requires them")]
    MissingFeatures,

    #[error("dataset has no ground-truth labels")]
    MissingTruth,

    #[error("factor degree {degree} exceeds the exact-enumeration cap {cap}; use the DP or Monte-Carlo mode")]
    DegreeAboveCap { degree: usize, cap: usize },

    #[error("enumeration state space {states} exceeds the oracle cap {cap}")]
    OracleCapExceeded { states: u128, cap: u64 },

    #[error("infeasible regular bipartite graph: {0}")]
    InfeasibleGraph(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("run failed: {0}")]
    Run(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code class for the CLI: 2 for data problems, 3 for run failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_)
            | Error::MalformedRow { .. }
            | Error::OutOfRange { .. }
            | Error::DuplicatePair { .. }
            | Error::MissingFeatures
            | Error::MissingTruth
            | Error::Io { .. } => 2,
            Error::Prior(_) | Error::Config(_) | Error::InfeasibleGraph(_) => 1,
            _ => 3,
        }
    }
}

use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One problem found while validating an experiment config, located by a
/// JSON-path-like string such as `strategies[1].test_ratio`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn join_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Coarse classification used by the command line to choose an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Stage,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("line {line}: cannot parse timestamp {value:?}: {reason}")]
    Timestamp {
        line: u64,
        value: String,
        reason: String,
    },

    #[error("line {line}: basket {basket:?} spans users {first:?} and {second:?}")]
    MixedUserBasket {
        line: u64,
        basket: String,
        first: String,
        second: String,
    },

    #[error("line {line}: basket {basket:?} has conflicting timestamps {first} and {second}")]
    BasketTimestampConflict {
        line: u64,
        basket: String,
        first: i64,
        second: i64,
    },

    #[error("schema: {0}")]
    Schema(String),

    #[error("unknown {kind}: {id}")]
    Unknown { kind: &'static str, id: String },

    #[error("filter removed every interaction")]
    EmptyFilterResult,

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("degenerate temporal boundary: {0}")]
    DegenerateBoundary(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{what}: unsupported format version {found} (expected {expected})")]
    FormatVersion {
        what: String,
        found: String,
        expected: u32,
    },

    #[error("{model} diverged at epoch {epoch}: non-finite parameters")]
    Divergence { model: &'static str, epoch: usize },

    #[error("relevant set is empty")]
    EmptyRelevant,

    #[error("no evaluable users")]
    NoEvaluableUsers,

    #[error("Kendall's tau is undefined: {0}")]
    UndefinedTau(String),

    #[error("model sets differ between strategies: {0}")]
    ModelSetMismatch(String),

    #[error("infeasible synthetic config: {0}")]
    InfeasibleSynth(String),

    #[error("config errors: {}", join_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("stage {stage} failed ({context})")]
    Stage {
        stage: String,
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidParameter { .. } | Error::Schema(_) => ErrorKind::Config,
            Error::Stage { .. } | Error::Divergence { .. } => ErrorKind::Stage,
            _ => ErrorKind::Data,
        }
    }
}

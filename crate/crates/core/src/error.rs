//! Crate-wide error type.
//!
//! Every variant maps to a short machine-parsable category via
//! [`Error::category`], which the CLI prints on failure.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("missing tape: {0}")]
    MissingTape(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("state error: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("missing prerequisite {path}: run `{command}` first")]
    MissingPrerequisite {
        path: PathBuf,
        command: &'static str,
    },

    #[error("stale artifacts in {stage}: {detail}; rerun `{command}`")]
    Stale {
        stage: &'static str,
        detail: String,
        command: &'static str,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Render(_) => "render",
            Error::Dimension { .. } => "dimension",
            Error::Contract(_) => "contract",
            Error::MissingTape(_) => "missing-tape",
            Error::Training(_) => "training",
            Error::Input(_) => "input",
            Error::State(_) => "state",
            Error::Format(_) => "format",
            Error::Consistency(_) => "consistency",
            Error::Metric(_) => "metric",
            Error::MissingPrerequisite { .. } => "missing-prerequisite",
            Error::Stale { .. } => "stale",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Instances that carry neither answer counts nor a precomputed score.
    #[error("{} instance(s) have no answers and no ambiguity score: {}", .0.len(), .0.join(", "))]
    MissingScores(Vec<String>),

    /// Operation requires every instance to be scored.
    #[error("{} instance(s) are not scored: {}", .0.len(), .0.join(", "))]
    Unscored(Vec<String>),

    #[error("detection references unknown image id {0:?}")]
    UnknownImage(String),

    #[error("no non-ignore ground truth instances; miss rate is undefined")]
    NoGroundTruth,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    /// True for failures of the environment (files, sockets) rather than of the input data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

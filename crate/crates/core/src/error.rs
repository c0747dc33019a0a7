use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("policy family mismatch: {0}")]
    FamilyMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("misaligned values: {0}")]
    Misaligned(String),
    #[error("operation requires a tabular environment")]
    NotTabular,
    #[error("observation kind not supported: {0}")]
    UnsupportedObservation(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

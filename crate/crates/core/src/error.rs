use std::io;

use thiserror::Error;

pub type Result<T, E = PsgError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PsgError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation: {0}")]
    Validation(String),

    #[error("node {node} out of range (num_nodes = {num_nodes})")]
    OutOfRange { node: usize, num_nodes: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config: {0}")]
    Config(String),

    #[error("edge feature store has no entry for pair ({0}, {1})")]
    MissingEdgeFeature(usize, usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unsatisfiable: {0}")]
    Unsatisfiable(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing node features: {0}")]
    MissingFeatures(String),

    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl PsgError {
    /// Stable machine-readable class name, printed by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            PsgError::Parse { .. } => "ParseError",
            PsgError::Validation(_) => "ValidationError",
            PsgError::OutOfRange { .. } => "OutOfRange",
            PsgError::Precondition(_) => "PreconditionError",
            PsgError::Config(_) => "ConfigError",
            PsgError::MissingEdgeFeature(..) => "FeatureStoreError",
            PsgError::Dimension(_) => "DimensionError",
            PsgError::NonFinite(_) => "NonFinite",
            PsgError::Unsatisfiable(_) => "Unsatisfiable",
            PsgError::Checkpoint(_) => "CheckpointError",
            PsgError::MissingFeatures(_) => "MissingFeatures",
            PsgError::Internal(_) => "InternalError",
            PsgError::Io { .. } => "IoError",
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: io::Error) -> Self {
        PsgError::Io {
            path: path.into(),
            source,
        }
    }
}

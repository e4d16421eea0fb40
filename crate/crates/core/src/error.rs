use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation received inputs that violate its shape or size contract.
    #[error("{op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("empty graph: propagation requires at least one vertex")]
    EmptyGraph,

    #[error("{message} at line {line}")]
    Parse { line: usize, message: String },

    #[error("{field} out of range: {value} (allowed {min}..={max})")]
    Range {
        field: &'static str,
        value: i64,
        min: i64,
        max: i64,
    },

    /// A NaN or infinity appeared in a forward value or gradient.
    #[error("numeric fault in {op}")]
    NumericFault { op: &'static str },

    /// A numeric fault during training, tagged with the global step index.
    #[error("numeric fault at training step {step}: {source}")]
    TrainingFault {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for NaN/Inf faults, including ones wrapped with a training step.
    pub fn is_numeric_fault(&self) -> bool {
        matches!(
            self,
            Error::NumericFault { .. } | Error::TrainingFault { .. }
        )
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {left:?} vs {right:?} ({context})")]
    ShapeMismatch {
        left: Vec<usize>,
        right: Vec<usize>,
        context: &'static str,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error("mask does not match network: {0}")]
    MaskMismatch(String),

    #[error("infeasible sparsity at layer {layer}: eta={eta} would deactivate {zeros} of {width} units")]
    InfeasibleSparsity {
        layer: usize,
        eta: f64,
        zeros: usize,
        width: usize,
    },

    #[error("operation requires a structured mask")]
    UnsupportedMode,

    #[error("not implemented: {0}")]
    NotImplemented(String),

    #[error("candidate {candidate_id} has no fitness value")]
    EvaluationIncomplete { candidate_id: u64 },

    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: String,
        offset: u64,
        message: String,
    },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("checksum mismatch for {0}")]
    Checksum(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("point has non-positive depth {depth} in the camera frame")]
    DegenerateDepth { depth: f64 },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    /// A patch with zero intensity spread; NCC is undefined there.
    #[error("degenerate patch (zero standard deviation)")]
    DegeneratePatch,

    #[error("all 2D weights are zero")]
    DegenerateWeights,

    #[error("optimizer aborted: {0}")]
    OptimizerAbort(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("relocated voxels collide with bone labels {labels:?} ({voxels} voxels)")]
    Collision { labels: Vec<u16>, voxels: usize },

    #[error("empty fragment after {attempts} attempts")]
    EmptyFragment { attempts: usize },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

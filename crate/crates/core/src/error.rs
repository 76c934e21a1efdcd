use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("{file}:{line}: {msg}")]
    Load {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("chebyshev fit error: {0}")]
    Fit(String),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("degenerate degree at node {node}")]
    DegenerateDegree { node: usize },

    #[error("solver diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("coefficients do not belong to this framelet system")]
    SystemMismatch,

    #[error("training error: {0}")]
    Training(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn load(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Load {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: format error at byte offset {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("Gram matrix of class {class} is numerically degenerate (jitter reached {jitter:e})")]
    NumericalDegeneracy { class: usize, jitter: f64 },

    #[error("{component} loss is not finite")]
    NonFiniteLoss { component: &'static str },

    #[error("training diverged at step {step}: {component} loss is not finite")]
    Divergence {
        step: usize,
        component: &'static str,
    },

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("projection error: {0}")]
    Projection(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("checkpoint checksum mismatch in {0}")]
    Checksum(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

//! Process exit codes.

use std::fmt;

use panvae::Error;

pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const DIVERGENCE: u8 = 4;
pub const CHECKPOINT: u8 = 5;
pub const GEOMETRY: u8 = 6;

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub fn code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) => CONFIG,
        Error::Data(_) | Error::Format { .. } | Error::Io { .. } => DATA,
        Error::Divergence { .. }
        | Error::NonFiniteLoss { .. }
        | Error::NumericalDegeneracy { .. } => DIVERGENCE,
        Error::IncompatibleCheckpoint(_) | Error::Checksum(_) => CHECKPOINT,
        Error::Geometry(_) | Error::Projection(_) => GEOMETRY,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: code_for(&e),
            error: e.into(),
        }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

/// Attaches a fixed exit code regardless of the underlying error.
pub trait WithCode<T> {
    fn code(self, code: u8) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: u8) -> CliResult<T> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

pub fn fail<T>(code: u8, msg: impl fmt::Display) -> CliResult<T> {
    Err(Failure {
        code,
        error: anyhow::anyhow!("{msg}"),
    })
}

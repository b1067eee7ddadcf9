use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes when reading a policy checkpoint.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint expects {what} dimension {checkpoint}, environment provides {env}")]
    DimensionMismatch {
        what: &'static str,
        checkpoint: usize,
        env: usize,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{origin}:{line}: {msg}")]
    Parse {
        origin: String,
        line: usize,
        msg: String,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("could not place all cars after {attempts} attempts (track too crowded)")]
    SpawnFailed { attempts: usize },
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(origin: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            origin: origin.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit status for the command-line front end:
    /// 1 usage error, 2 I/O error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_)
            | Error::InvalidConfig(_)
            | Error::Parse { .. }
            | Error::SpawnFailed { .. }
            | Error::EpisodeDone
            | Error::Checkpoint(CheckpointError::DimensionMismatch { .. }) => 1,
            Error::Io { .. } | Error::Checkpoint(_) => 2,
            Error::NonFinite(_) => 3,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

use crate::engine::SimTime;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot schedule at {at}: clock already at {now}")]
    ScheduleInPast { now: SimTime, at: SimTime },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("handler failed at {time} on entity {entity}: {source}")]
    Handler {
        time: SimTime,
        entity: u64,
        #[source]
        source: Box<SimError>,
    },
}

/// Errors surfaced to the command line and file loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Sim(#[from] SimError),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("sweep point {index} ({value}) failed: {source}")]
    SweepPoint {
        index: usize,
        value: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

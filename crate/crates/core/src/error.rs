use std::path::PathBuf;

/// Errors raised by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error in {context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("mapping error: {0}")]
    Mapping(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("tape was recorded against a different parameter state (recorded generation {recorded}, current {current})")]
    StaleTape { recorded: u64, current: u64 },

    #[error("simulation diverged at t = {time:.4} s")]
    Divergence { time: f64 },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

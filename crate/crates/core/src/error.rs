use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the simulator can report. Variants map onto the CLI's
/// category-coded exit status via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("no data: {0}")]
    NoData(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("divergent parameter: {0}")]
    Divergence(String),

    #[error("state corruption: {0}")]
    StateCorruption(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("episode with seed {seed} failed: {source}")]
    Episode {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error category. Zero is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parameter(_) | Error::Divergence(_) => 3,
            Error::Infeasible(_) => 4,
            Error::NoData(_) | Error::StateCorruption(_) => 5,
            Error::Io { .. } => 6,
            Error::Episode { source, .. } => source.exit_code(),
        }
    }
}

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("trajectory tuning failed: {0}")]
    Tuning(String),

    #[error("subset simulation did not reach the failure domain within {max_levels} levels (thresholds: {thresholds:?})")]
    NoConvergence { max_levels: usize, thresholds: Vec<f64> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Configuration problems map to exit code 2, everything numerical to 3.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Dimension { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

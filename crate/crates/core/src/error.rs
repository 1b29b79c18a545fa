use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OffloadError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("episode is over (t = {t}, horizon = {horizon})")]
    EpisodeOver { t: usize, horizon: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}:{line}: {msg}")]
    Validation { path: PathBuf, line: usize, msg: String },

    #[error("problem too large: {0}")]
    Size(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("policy `{policy}` emitted invalid action code {code}")]
    PolicyContract { policy: String, code: u8 },

    #[error("budget violated on `{trace}`: {queries} cloud queries with budget {budget}")]
    BudgetViolation { trace: String, queries: usize, budget: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at episode {episode}: {detail}")]
    Divergence { episode: u64, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl OffloadError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OffloadError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = OffloadError> = std::result::Result<T, E>;

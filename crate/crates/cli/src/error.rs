use std::fmt;
use std::process::ExitCode;

use offload_core::OffloadError;

/// Command failure, classified by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid config. Exit 1.
    Usage(String),
    /// Anything that went wrong while running. Exit 2.
    Runtime(anyhow::Error),
    /// A checked invariant or verification failed. Exit 3.
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }

    pub fn to_exit(&self) -> ExitCode {
        ExitCode::from(self.exit_code())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<OffloadError> for CliError {
    fn from(e: OffloadError) -> Self {
        match e {
            OffloadError::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

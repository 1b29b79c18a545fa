//! Library side of the `offload` command-line tool.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{RunConfig, Split};
pub use error::CliError;

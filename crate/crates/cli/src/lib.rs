//! Configuration, experiment assembly and command orchestration for the
//! `spodgt` binary. Everything the binary does is callable as a library so
//! the acceptance suite can exercise it directly.

pub mod commands;
pub mod config;
pub mod experiment;

use std::fmt;

/// Process-level failures with their exit codes:
/// 0 success, 2 configuration error, 3 divergence, 4 check failure.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Divergence(String),
    CheckFailed,
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Divergence(msg) => write!(f, "divergence: {msg}"),
            CliError::CheckFailed => write!(f, "one or more checks failed"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::CheckFailed => 4,
            CliError::Io(_) => 1,
        }
    }
}

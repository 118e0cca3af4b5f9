//! File formats, configuration and subcommands behind the `dpse` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod io;

use thiserror::Error;

/// Failure of a subcommand, mapped onto the process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("verification failed: {}", .0.join(", "))]
    VerificationFailed(Vec<String>),
    #[error("MAP solver did not converge: {0}")]
    NonConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerificationFailed(_) => 1,
            CliError::Config(_) | CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }
}

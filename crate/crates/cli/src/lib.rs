//! Command-line front end for the relaxation Runge-Kutta toolkit: configured
//! runs with artifact output, convergence ladders and table rendering.

pub mod config;
pub mod convergence;
pub mod driver;
pub mod tables;

use thiserror::Error;

/// Front-end error type; the binary maps variants to exit codes to keep
/// blowups (exit 2) distinguishable from bad configs and solver trouble
/// (exit 1).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("solution left the finite range: {0}")]
    NonFinite(String),
    #[error("{0}")]
    Run(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<relaxrk::Error> for CliError {
    fn from(err: relaxrk::Error) -> Self {
        match err {
            relaxrk::Error::NonFinite(msg) => CliError::NonFinite(msg),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::NonFinite(_) => 2,
            _ => 1,
        }
    }
}

//! Run orchestration behind the `avlab` binary: configuration loading,
//! training, evaluation, baseline and plotting commands.

pub mod commands;
pub mod config;

use std::fmt;

pub use commands::{BaselineSummary, Cli, Command};
pub use config::{config_hash, LoadedConfig, RunConfig};

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Config = 2,
    Training = 3,
    Io = 4,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { status: ExitStatus::Config, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { status: ExitStatus::Io, message: message.into() }
    }

    pub fn code(&self) -> i32 {
        self.status as i32
    }

    /// Prefixes the message, keeping the status.
    pub fn context(self, what: &str) -> Self {
        Self { status: self.status, message: format!("{what}: {}", self.message) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<avlab_core::Error> for CliError {
    fn from(e: avlab_core::Error) -> Self {
        use avlab_core::Error as E;
        let status = match &e {
            E::Config(_) | E::Usage(_) | E::UndefinedMetric(_) | E::Format { .. } => ExitStatus::Config,
            E::Fault(_) | E::DegenerateGeometry { .. } | E::FilterDivergence { .. } | E::Training(_) => {
                ExitStatus::Training
            }
            E::Io { .. } => ExitStatus::Io,
        };
        Self { status, message: e.to_string() }
    }
}

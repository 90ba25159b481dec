//! Library half of the `qhmc-gp` command-line tool: configuration, output
//! files and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod output;
pub mod selftest;
pub mod svg;

use config::ConfigError;

/// A failed command, carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad or unreadable configuration. Exit status 2.
    Config(ConfigError),
    /// Anything that went wrong after the configuration was accepted. Exit status 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

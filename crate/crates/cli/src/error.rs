use std::path::Path;

use serde::Serialize;

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or unreadable configuration; nothing was computed.
    #[error("{0}")]
    Config(String),
    /// Failure while loading data, training or writing artifacts.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// One-line JSON written to stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            message: String,
            exit_code: i32,
        }
        serde_json::to_string(&Report { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() })
            .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind()))
    }

    pub fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<symbolnet::Error> for CliError {
    fn from(e: symbolnet::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

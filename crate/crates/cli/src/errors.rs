//! CLI error taxonomy mapped to exit codes: 2 for input validation, 3 for
//! computation failures.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Malformed input files, schema mismatches, bad config.
    Validation(String),
    /// Failures inside the numerical pipeline.
    Compute(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "invalid input: {msg}"),
            CliError::Compute(msg) => write!(f, "computation failed: {msg}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}

impl From<extrabound::Error> for CliError {
    fn from(err: extrabound::Error) -> Self {
        match err {
            // Unreadable or wrongly versioned artifact files are input
            // problems, not pipeline failures.
            extrabound::Error::Serialization(_) => CliError::Validation(err.to_string()),
            _ => CliError::Compute(err.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Validation(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error("{path}: at `{field}`: {message}")]
    Schema { path: PathBuf, field: String, message: String },

    #[error("scenario field `{field}`: {message}")]
    Scenario { field: String, message: String },

    #[error("malformed result bundle {path}: {message}")]
    Bundle { path: PathBuf, message: String },

    #[error(transparent)]
    Solver(#[from] impulse_sip::Error),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn scenario(field: impl Into<String>, message: impl ToString) -> Self {
        Self::Scenario { field: field.into(), message: message.to_string() }
    }

    /// Process exit code: 4 for input/output and schema problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Read { .. }
            | Self::Write { .. }
            | Self::Schema { .. }
            | Self::Scenario { .. }
            | Self::Bundle { .. } => 4,
            Self::Usage(_) => 4,
            Self::Solver(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

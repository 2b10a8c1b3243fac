use std::path::Path;

use unmix_core::UnmixError;

/// Problems reading or writing one of the artifact's file formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("byte {offset}: {message}")]
    Parse { offset: u64, message: String },
    #[error("line {line}, column {column}: {message}")]
    Csv { line: u64, column: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    InFile { path: String, source: Box<FormatError> },
}

impl FormatError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io { path: path.display().to_string(), source }
    }

    pub fn in_file(self, path: &Path) -> Self {
        match self {
            e @ (FormatError::Io { .. } | FormatError::InFile { .. }) => e,
            e => FormatError::InFile { path: path.display().to_string(), source: Box::new(e) },
        }
    }
}

/// Everything a subcommand can fail with, mapped onto the exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Solver(#[from] UnmixError),
    #[error("{0}")]
    Io(String),
    /// Results were written but the solver stopped at its iteration cap.
    #[error("solver did not converge: {0}")]
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Format(FormatError::Io { .. }) => 1,
            CliError::NotConverged(_) => 3,
            _ => 2,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

pub type CliResult<T> = Result<T, CliError>;

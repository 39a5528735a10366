use std::fmt;
use std::process::ExitCode;

/// Failures mapped onto the process exit codes: 2 for usage, configuration,
/// format and prerequisite errors, 3 for numeric failures.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Numeric(_) => ExitCode::from(3),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<tripmine::Error> for CliError {
    fn from(e: tripmine::Error) -> Self {
        match e {
            tripmine::Error::Numeric(_) => CliError::Numeric(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

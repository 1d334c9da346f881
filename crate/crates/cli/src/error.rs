use thiserror::Error;

/// Failure of a command, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad configuration, missing input paths. Exit 2.
    #[error("{0}")]
    Usage(String),
    /// Unreadable or malformed files, I/O failures. Exit 3.
    #[error("{0}")]
    Data(String),
    /// Training produced NaN or infinity. Exit 4.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<ducdlc::Error> for CliError {
    fn from(e: ducdlc::Error) -> Self {
        use ducdlc::Error as E;
        match e {
            E::InvalidArgument(_) | E::InvalidConfig(_) => CliError::Usage(e.to_string()),
            E::NonFinite(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors disagree on a dimension that the operation requires to match.
    #[error("{op}: shape mismatch in {dim} (expected {expected}, found {found})")]
    ShapeMismatch {
        op: String,
        dim: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("class index {value} out of range for {classes} classes")]
    ClassOutOfRange { value: usize, classes: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: impl Into<String>, dim: &'static str, expected: usize, found: usize) -> Self {
        Error::ShapeMismatch {
            op: op.into(),
            dim,
            expected,
            found,
        }
    }

    /// Prefixes the operation name of a shape error with the stage it came from.
    pub(crate) fn in_stage(self, stage: &str) -> Self {
        match self {
            Error::ShapeMismatch {
                op,
                dim,
                expected,
                found,
            } => Error::ShapeMismatch {
                op: format!("{stage}/{op}"),
                dim,
                expected,
                found,
            },
            Error::InvalidArgument(msg) => Error::InvalidArgument(format!("{stage}: {msg}")),
            other => other,
        }
    }
}

use thiserror::Error;

/// Errors raised anywhere in the stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("size guard exceeded: {0}")]
    Guard(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable category used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Parameter(_) => "parameter",
            Error::Numeric(_) => "numeric",
            Error::Config { .. } => "config",
            Error::Invariant(_) => "invariant",
            Error::Guard(_) => "guard",
            Error::Format(_) => "format",
            Error::Empty(_) => "empty",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(context: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension(format!(
            "{context}: expected {expected}, got {actual}"
        )));
    }
    Ok(())
}

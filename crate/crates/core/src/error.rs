use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Bad arguments or inputs outside an operation's domain.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numerical failure in {module}::{op}: {detail}")]
    Numerical {
        module: &'static str,
        op: &'static str,
        detail: String,
    },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numerical(
        module: &'static str,
        op: &'static str,
        detail: impl Into<String>,
    ) -> Self {
        Error::Numerical {
            module,
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

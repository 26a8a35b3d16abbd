use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape disagreement between related inputs (row counts, vector lengths).
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// Semantically invalid input: bad configuration values, non-binary
    /// labels, constant columns where variation is required, and so on.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A malformed cell or row in an input file; `line` is 1-based.
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Numerical breakdown: non-finite objective, failed factorization,
    /// or an optimizer that could not produce a usable iterate.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for failures of the numerical kind (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }

    /// Prepends locating context (a lambda, a fold) to the message while
    /// keeping the variant, so exit-code mapping is unaffected.
    pub fn prefixed(self, ctx: &str) -> Self {
        match self {
            Error::Dim(m) => Error::Dim(format!("{ctx}: {m}")),
            Error::Invalid(m) => Error::Invalid(format!("{ctx}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
            other => other,
        }
    }
}

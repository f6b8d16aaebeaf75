use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: String,
        found: String,
    },

    /// A matrix that must be inverted is singular or too badly conditioned.
    #[error("{matrix} is singular or ill-conditioned (condition estimate {condition:.3e}); {hint}")]
    Singular {
        matrix: String,
        condition: f64,
        hint: String,
    },

    #[error("matrix is not strictly stable (spectral radius {0})")]
    Unstable(f64),

    #[error("power envelope has not settled within horizon {0}; increase the horizon")]
    HorizonTooSmall(usize),

    #[error("{0} is not available in this mode")]
    Unavailable(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dim(context: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for failures caused by the numbers rather than by the caller's
    /// configuration or the filesystem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. } | Error::Unstable(_) | Error::HorizonTooSmall(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Csv(_))
    }
}

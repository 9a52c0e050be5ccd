use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input line.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Well-formed input that violates a data invariant.
    #[error("validation: {0}")]
    Validation(String),

    #[error("topic training: {0}")]
    Training(String),

    #[error("invalid estimator config: {0}")]
    Config(String),

    #[error("estimation failed at iteration {iteration}: {msg}")]
    Estimation { iteration: usize, msg: String },

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for failures of the numerical procedures themselves, as opposed
    /// to bad input or configuration.
    pub fn is_computation_failure(&self) -> bool {
        matches!(
            self,
            Error::Estimation { .. } | Error::Evaluation(_) | Error::Training(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

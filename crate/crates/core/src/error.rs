use thiserror::Error;

/// Errors raised across the localization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("underdetermined system: {0}")]
    Underdetermined(String),

    #[error("no solution available: {0}")]
    NoSolution(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

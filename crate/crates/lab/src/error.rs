use oseledets_core::Error as CoreError;
use serde::Serialize;
use thiserror::Error;

pub type LabResult<T> = Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("certificate failure: {0}")]
    Certificate(String),
    #[error("numerical failure: {0}")]
    Numerical(CoreError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<CoreError> for LabError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidInput(_)
            | CoreError::ConstraintViolation(_)
            | CoreError::NegativeIterateOfNonInvertible
            | CoreError::SpaceMismatch(..)
            | CoreError::AmbientMismatch(..)
            | CoreError::NormMismatch => LabError::Config(e.to_string()),
            CoreError::HypothesisSynthesisFailure(_) => LabError::Certificate(e.to_string()),
            other => LabError::Numerical(other),
        }
    }
}

impl From<csv::Error> for LabError {
    fn from(e: csv::Error) -> Self {
        LabError::Io(std::io::Error::other(e.to_string()))
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Io(_) => 2,
            LabError::Certificate(_) => 3,
            LabError::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Config(_) => "config",
            LabError::Io(_) => "io",
            LabError::Certificate(_) => "certificate",
            LabError::Numerical(_) => "numerical",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("profile has no records")]
    EmptyProfile,

    #[error("invalid privacy budget {0}: must be finite and > 0")]
    InvalidEpsilon(f64),

    #[error("invalid count for level {epsilon}: must be >= 1")]
    InvalidCount { epsilon: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("value {0} outside [-1/2, 1/2]")]
    ValueOutOfRange(f64),

    #[error("no record has budget >= {0}")]
    NoEligibleRecords(f64),

    #[error("affine plan does not match dataset: {0}")]
    PlanMismatch(String),

    #[error("parse error in {field}: {reason}")]
    Parse { field: String, reason: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

use thiserror::Error;

use crate::types::Violation;

/// Errors raised by the unmixing library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnmixError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("constraint violation: {0}")]
    Violation(Violation),

    #[error("data rank {rank} is below the requested {requested} endmembers")]
    RankDeficient { rank: usize, requested: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("pixel {pixel}: {source}")]
    Pixel {
        pixel: usize,
        #[source]
        source: Box<UnmixError>,
    },
}

impl UnmixError {
    pub(crate) fn mismatch(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        UnmixError::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T, E = UnmixError> = std::result::Result<T, E>;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("structural check `{what}` failed: residual {residual:e} exceeds {tolerance:e}")]
    Structure {
        what: &'static str,
        residual: f64,
        tolerance: f64,
    },

    #[error("argmin oracle unsupported: {0}")]
    UnsupportedOracle(String),

    #[error("empty window [{start}, {end}]")]
    EmptyWindow { start: f64, end: f64 },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

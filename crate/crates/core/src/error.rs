use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    /// An instance, matching or distribution failed validation.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("rates sum to {sum} but horizon is {horizon}")]
    RateSum { sum: f64, horizon: usize },

    #[error("{what} exceeds cap: {size} > {cap}")]
    CapExceeded {
        what: &'static str,
        size: u128,
        cap: u128,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

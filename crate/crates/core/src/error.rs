use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid {what}: {detail}")]
    Spec { what: &'static str, detail: String },

    #[error("input size {h}x{w} must be divisible by {divisor} on both sides")]
    InputSize { h: usize, w: usize, divisor: usize },

    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    #[error("unknown preset group '{0}'")]
    UnknownGroup(String),

    #[error("benchmark config: {0}")]
    Bench(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn spec(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Spec { what, detail: detail.into() }
    }

    /// True for errors caused by an invalid model or preset description.
    pub fn is_spec_error(&self) -> bool {
        matches!(
            self,
            Error::Spec { .. } | Error::InputSize { .. } | Error::UnknownPreset(_) | Error::UnknownGroup(_) | Error::Json(_)
        )
    }
}

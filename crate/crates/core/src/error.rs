use thiserror::Error;

/// Errors raised by the library.
///
/// Data-level problems (reference invariant violations) are reported as
/// values by [`crate::domain::validate_reference`] and never surface here.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("malformed hypothesis: {0}")]
    MalformedHypothesis(String),

    #[error("undefined denominator: {0}")]
    UndefinedDenominator(&'static str),

    #[error("speaker {0} has no profile in the inventory")]
    MissingProfile(u32),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("instance too large for exhaustive enumeration: {0}")]
    CostBound(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::NonFinite { .. } => "numeric",
            Error::Contract(_) => "contract",
            Error::MalformedHypothesis(_) => "malformed_hypothesis",
            Error::UndefinedDenominator(_) => "undefined_denominator",
            Error::MissingProfile(_) => "missing_profile",
            Error::Config(_) => "config",
            Error::CostBound(_) => "cost_bound",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Broad failure category, used for CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Domain,
    Truncation,
    Config,
    Numerical,
    Divergence,
    Schema,
    Io,
    EmptyInput,
}

impl ErrorCategory {
    /// Process exit status for this category. 2 is left to usage errors.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 3,
            ErrorCategory::Schema => 4,
            ErrorCategory::Io => 5,
            ErrorCategory::EmptyInput => 6,
            ErrorCategory::Domain => 7,
            ErrorCategory::Truncation => 8,
            ErrorCategory::Numerical => 9,
            ErrorCategory::Divergence => 10,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("truncation overflow: residual mass {residual:.3e} remains after {max_terms} terms")]
    TruncationOverflow { residual: f64, max_terms: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("no users left for estimation: {0}")]
    EmptyInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Domain(_) => ErrorCategory::Domain,
            Error::TruncationOverflow { .. } => ErrorCategory::Truncation,
            Error::Config(_) | Error::Toml(_) => ErrorCategory::Config,
            Error::Numerical { .. } => ErrorCategory::Numerical,
            Error::Divergence(_) => ErrorCategory::Divergence,
            Error::Schema(_) => ErrorCategory::Schema,
            Error::EmptyInput(_) => ErrorCategory::EmptyInput,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => ErrorCategory::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

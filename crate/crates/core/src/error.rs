use thiserror::Error;

/// Errors produced by dataset construction, training, and I/O.
#[derive(Debug, Error)]
pub enum CatError {
    /// Invalid configuration (bad ranges, impossible requests).
    #[error("configuration error: {0}")]
    Config(String),

    /// Dataset violates a structural requirement.
    #[error("data error: {0}")]
    Data(String),

    /// Malformed input file; `line` is 1-based (header is line 1).
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Non-finite values or other numeric breakdown.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A caller violated an API precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CatError>;

impl CatError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CatError::Io {
            path: path.into(),
            source,
        }
    }
}

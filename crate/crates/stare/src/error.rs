use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("ROI map validation failed:\n{}", .0.join("\n"))]
    RoiValidation(Vec<String>),

    #[error("unsupported layout: {0}")]
    UnsupportedLayout(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("vocabulary error: token id {id} >= vocab size {vocab}")]
    Vocabulary { id: u32, vocab: usize },

    #[error("sequence length {len} exceeds max_len {max}")]
    Length { len: usize, max: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {msg}")]
    Json { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use thiserror::Error;

/// Crate-wide error type. Variants mirror the failure classes of the
/// pipeline stages so the CLI can name the failing stage.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad layout kind, mismatched
    /// encoding, inconsistent architecture).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside its documented domain (goal id out of range,
    /// non-positive temperature, empty batch).
    #[error("argument error: {0}")]
    Argument(String),

    /// A goal encoding that is undefined for the given layout.
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),

    /// Tensor shape mismatch; names both shapes.
    #[error("shape error: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    /// Demonstration generation failed (goal unreachable within the step
    /// budget, degenerate start state).
    #[error("generation error: {0}")]
    Generation(String),

    /// Training failure (non-finite gradients, empty goal subset).
    #[error("training error: {0}")]
    Training(String),

    /// A file that is not in the expected format (bad magic, wrong version).
    #[error("format error: {0}")]
    Format(String),

    /// A file that is structurally damaged (truncated payload).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Config file parse failure; carries the parser's location info.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

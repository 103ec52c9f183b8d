use thiserror::Error;

/// Error type for fallible boundary operations: file formats, configuration,
/// data generation, and the training loop.
///
/// Shape and wiring violations inside the tensor engine are programming
/// errors and panic with a descriptive message instead.
#[derive(Debug, Error)]
pub enum LgsaError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("truncated file {path}: expected {expected} bytes, got {actual}")]
    Truncated {
        path: String,
        expected: u64,
        actual: u64,
    },

    #[error("checkpoint architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("non-finite loss at step {step} (epoch {epoch}): training diverged")]
    NonFiniteLoss { step: usize, epoch: usize },

    #[error("input validation failed: {0}")]
    InvalidInput(String),
}

impl LgsaError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        LgsaError::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: bad magic number 0x{found:08x}, expected 0x{expected:08x}")]
    Format {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("checkpoint integrity: {0}")]
    Integrity(String),

    #[error("checkpoint holds a {found} model, expected {expected}")]
    Kind { expected: String, found: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {what} is not finite")]
    Divergence {
        epoch: usize,
        batch: usize,
        what: String,
    },

    #[error("frozen classifier was modified: {0}")]
    ContractViolation(String),

    #[error("class {class}: only {admitted} of {wanted} samples admitted after {attempts} attempts")]
    Generation {
        class: usize,
        admitted: usize,
        wanted: usize,
        attempts: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Encode(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

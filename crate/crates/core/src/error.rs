use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed NPY header or unsupported layout.
    #[error("format error: {0}")]
    Format(String),

    /// Dimensions or ranks that do not fit together.
    #[error("shape error: {0}")]
    Shape(String),

    /// Values violating a type invariant (non-finite, out of range, bad sums).
    #[error("data error: {0}")]
    Data(String),

    #[error("config error in field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Knowledge-graph document violating the schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Landmark configuration that does not determine an affine map.
    #[error("degenerate landmark configuration: {0}")]
    DegenerateConfiguration(String),

    /// The conditioning organ carries (almost) no mass under the current marginals.
    #[error("empty conditioning: organ {organ} has soft mass {mass:e}")]
    EmptyConditioning { organ: usize, mass: f64 },

    #[error("instance too large for exact enumeration: {0}")]
    Capacity(String),

    #[error("degenerate corruption: {0}")]
    DegenerateCorruption(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Error taxonomy shared across the crate.
//!
//! Variants map onto process exit codes at the CLI boundary: usage and
//! config errors exit 1, data/schema/parse/io errors exit 2, numerical
//! aborts exit 3.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A configuration value is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A record or file violates the declared schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Input data cannot support the requested operation.
    #[error("data error: {0}")]
    Data(String),

    /// The caller asked for something the API forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// A non-finite value appeared where finite math is required.
    #[error("numerical error: {0}")]
    Numeric(String),

    /// A line of an input file failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A pipeline stage failed; wraps the stage name around the cause.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse error class used for exit-code mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps `self` with the name of the pipeline stage that raised it.
    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Classifies the error for exit-code purposes, looking through
    /// stage wrappers.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) | Error::Config(_) => ErrorClass::Usage,
            Error::Shape(_) | Error::Numeric(_) => ErrorClass::Numeric,
            Error::Schema(_) | Error::Data(_) | Error::Parse { .. } | Error::Io { .. } => {
                ErrorClass::Data
            }
            Error::Stage { source, .. } => source.class(),
        }
    }
}

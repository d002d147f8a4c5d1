use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// Variants are grouped so that the command-line front end can map them onto
/// exit codes: everything except [`Error::Inference`] and [`Error::Sampling`]
/// is an input problem.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("validation error: {field}: {msg}")]
    Validation { field: String, msg: String },

    #[error("{what} {index} out of range (available: {available})")]
    Range {
        what: &'static str,
        index: usize,
        available: usize,
    },

    #[error("inference error on {slide_id} level {level} at ({x}, {y}): {msg}")]
    Inference {
        slide_id: String,
        level: usize,
        x: i64,
        y: i64,
        msg: String,
    },

    #[error("sampling error in region {region_id}: {msg}")]
    Sampling { region_id: usize, msg: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format { .. } => "format",
            Error::Validation { .. } => "validation",
            Error::Range { .. } => "range",
            Error::Inference { .. } => "inference",
            Error::Sampling { .. } => "sampling",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code: 3 for failures raised while running inference, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Inference { .. } | Error::Sampling { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// A vector or matrix had the wrong size for the named field.
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },

    /// A scalar argument was outside its valid range.
    InvalidArgument(String),

    /// A point reached the camera near plane during projection.
    BehindCamera { index: usize, z: f64 },

    /// An instance has no visible keypoints and cannot be aligned.
    NoVisibleKeypoints,

    /// An energy term or its gradient evaluated to NaN/inf.
    NonFinite { term: String },

    /// The objective became non-finite during minimization; the last
    /// finite parameter vector and objective trace are kept for diagnosis.
    Diverged {
        last_params: Vec<f64>,
        trace: Vec<f64>,
    },

    /// init_pose was called with an empty synthetic database.
    EmptyDatabase,

    /// A fitting stage needs more instances than were provided.
    TooFewInstances { needed: usize, got: usize },

    /// Template/model/manifest validation failure.
    Validation(String),

    /// A model file was built against a different template.
    TemplateHashMismatch { expected: String, got: String },

    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    Parse {
        path: PathBuf,
        msg: String,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                field,
                expected,
                got,
            } => write!(f, "dimension mismatch in `{field}`: expected {expected}, got {got}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::BehindCamera { index, z } => {
                write!(f, "point {index} at z={z} is at or behind the camera near plane")
            }
            Error::NoVisibleKeypoints => write!(f, "instance has no visible keypoints"),
            Error::NonFinite { term } => write!(f, "non-finite value in term `{term}`"),
            Error::Diverged { trace, .. } => {
                write!(f, "optimization diverged after {} iterations", trace.len())
            }
            Error::EmptyDatabase => write!(f, "synthetic pose database is empty"),
            Error::TooFewInstances { needed, got } => {
                write!(f, "need at least {needed} instances, got {got}")
            }
            Error::Validation(msg) => write!(f, "validation failed: {msg}"),
            Error::TemplateHashMismatch { expected, got } => {
                write!(f, "template hash mismatch: model built for {expected}, manifest template is {got}")
            }
            Error::Io { path, source } => write!(f, "io error at {}: {source}", path.display()),
            Error::Parse { path, msg } => write!(f, "parse error in {}: {msg}", path.display()),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

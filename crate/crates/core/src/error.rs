use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the library.
///
/// Variants are grouped by [`ErrorKind`] so that front ends can map them to
/// stable exit codes without matching on every variant.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is singular (pivot {pivot} in column {column})")]
    Singular { column: usize, pivot: f64 },

    #[error("unusable survival data: {0}")]
    UnusableSurvivalData(String),

    #[error("dimension mismatch for slide `{slide}`: expected {expected} features, found {found}")]
    FeatureDimension {
        slide: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate slide id `{0}`")]
    DuplicateSlide(String),

    #[error("malformed data in {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error categories, stable across versions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Caller passed something that violates a documented precondition.
    InvalidInput,
    /// Input files are missing or unreadable.
    Io,
    /// Input files exist but do not parse or validate.
    MalformedData,
    /// Survival labels cannot support a Cox loss or a C-index.
    UnusableSurvivalData,
    /// Numerical breakdown (NaN, Inf, singular systems).
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidArgument(_) | Error::Domain { .. } => {
                ErrorKind::InvalidInput
            }
            Error::NonFinite(_) | Error::Singular { .. } => ErrorKind::Numerical,
            Error::UnusableSurvivalData(_) => ErrorKind::UnusableSurvivalData,
            Error::FeatureDimension { .. }
            | Error::DuplicateSlide(_)
            | Error::Malformed { .. }
            | Error::Json(_) => ErrorKind::MalformedData,
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

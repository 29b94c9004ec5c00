// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = OodError> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Variants fall in two buckets for the command-line front end: input or
/// configuration problems (exit code 2) and failures while running a method
/// (exit code 1). See [`OodError::exit_code`].
#[derive(Debug, Error)]
pub enum OodError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("malformed tensor header: {0}")]
    MalformedHeader(String),
    #[error("payload size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("shape mismatch for {tensor}: expected {expected}, found {actual}")]
    ShapeMismatch {
        tensor: String,
        expected: String,
        actual: String,
    },
    #[error("label {value} in {tensor} is outside [0, {classes})")]
    LabelOutOfRange {
        tensor: String,
        value: i64,
        classes: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("eigensolver did not converge after {0} sweeps")]
    ConvergenceFailure(usize),
    #[error("GEN top-M {m} outside [1, {classes}]")]
    MOutOfRange { m: usize, classes: usize },
    #[error("subspace dimension {dim} outside [1, {features}]")]
    DOutOfRange { dim: usize, features: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("every feature fell below the pruning threshold {0}")]
    AllPruned(f64),
    #[error("predicted class {0} had no training members")]
    UnusableClass(usize),
    #[error("feature vector has zero l1 norm")]
    ZeroNormFeature,
    #[error("logit score {0} is not positive")]
    NonPositiveSampleScore(f64),
    #[error("training-mean logit score {0} is not positive; choose another logit score")]
    NonPositiveMean(f64),
    #[error("method {0} must be fitted before scoring")]
    NotFitted(String),
    #[error("unknown method {0}")]
    UnknownMethod(String),
    #[error("split {0} not found")]
    MissingSplit(String),
    #[error("fitted state invalid: {0}")]
    InvalidState(String),
}

impl OodError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            OodError::MissingFile(path)
        } else {
            OodError::Io { path, source }
        }
    }

    /// Process exit code: 2 for configuration/input failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            OodError::Io { .. }
            | OodError::MissingFile(_)
            | OodError::MalformedHeader(_)
            | OodError::SizeMismatch { .. }
            | OodError::UnsupportedDtype(_)
            | OodError::Manifest(_)
            | OodError::ShapeMismatch { .. }
            | OodError::LabelOutOfRange { .. }
            | OodError::NonFinite(_)
            | OodError::Csv(_)
            | OodError::MOutOfRange { .. }
            | OodError::DOutOfRange { .. }
            | OodError::InvalidConfig(_)
            | OodError::UnknownMethod(_)
            | OodError::MissingSplit(_)
            | OodError::NotFitted(_)
            | OodError::InvalidState(_) => 2,
            _ => 1,
        }
    }
}

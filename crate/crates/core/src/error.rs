use std::path::PathBuf;

use thiserror::Error;

use crate::scores::Method;

pub type Result<T> = std::result::Result<T, OodError>;

#[derive(Debug, Error)]
pub enum OodError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated payload: need {needed} bytes at offset {offset}, file has {available}")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("trailing bytes: payload ends at {expected}, file has {actual}")]
    TrailingBytes { expected: usize, actual: usize },

    #[error("non-finite value in {channel} at ({row}, {col})")]
    NonFinite {
        channel: &'static str,
        row: usize,
        col: usize,
    },

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("flag/payload mismatch: {0}")]
    FlagMismatch(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid method config: {0}")]
    InvalidConfig(String),

    #[error("class {0} has no training samples")]
    MissingClass(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate residual: training features lie entirely inside the principal subspace")]
    DegenerateResidual,

    #[error("non-positive virtual-logit scale {0}")]
    NonPositiveAlpha(f64),

    #[error("zero-norm feature vector at sample {0}")]
    ZeroNorm(usize),

    #[error("zero activation mass at sample {0}")]
    ZeroActivationMass(usize),

    #[error("degenerate class pair ({0}, {1}): identical weight rows")]
    DegenerateClassPair(usize, usize),

    #[error("k = {k} exceeds index size {size}")]
    NeighborCount { k: usize, size: usize },

    #[error("not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("{method} requires fitted artifact that is missing")]
    MissingArtifact { method: Method },

    #[error("{method} requires input channel `{channel}`")]
    MissingChannel {
        method: Method,
        channel: &'static str,
    },

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("access violation: {path} is not readable during the {phase} phase")]
    AccessViolation { path: PathBuf, phase: String },

    #[error("sidecar checksum mismatch for channel {0}")]
    ChecksumMismatch(String),
}

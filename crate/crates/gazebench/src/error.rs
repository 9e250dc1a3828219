//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The 3D point lies at or behind the camera plane (z <= EPS_DEPTH).
    #[error("point is behind the camera")]
    BehindCamera,

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("marker id {id} exceeds grid capacity {capacity}")]
    MarkerOverflow { id: u32, capacity: u32 },

    #[error("no overlap with at least {required} matching markers between streams")]
    NoOverlap { required: usize },

    /// Multiple candidate offsets tie on the match count. Impossible with
    /// frame-unique markers; signals corrupt input.
    #[error("ambiguous synchronization: multiple offsets tie")]
    AmbiguousSync,

    #[error("clip of {len} frames is too short, need at least {required}")]
    ClipTooShort { len: usize, required: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not a rotation (|R^T R - I| > 1e-6)")]
    NotARotation,

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("dataset is empty")]
    DatasetEmpty,

    #[error("co-learning pair mismatch: {0}")]
    PairMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("no frames selected for evaluation")]
    EmptyEvalSet,

    #[error("no session directories found under {0}")]
    NoSessions(String),

    #[error("tensor file error: {0}")]
    TensorFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

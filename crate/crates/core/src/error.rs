//! Error type shared across the crate.

use thiserror::Error;

use crate::store::CompatReport;

/// Errors produced by container I/O, topology classification, analysis and
/// merge operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid container header: {0}")]
    InvalidHeader(String),

    #[error("unknown dtype string {0:?}")]
    UnknownDType(String),

    #[error("tensor {name:?}: invalid data offsets: {detail}")]
    InvalidOffsets { name: String, detail: String },

    #[error("truncated file: need {expected} bytes, file has {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("tensor {name:?}: buffer is {actual} bytes, dtype/shape require {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("tensor not found: {0:?}")]
    TensorNotFound(String),

    #[error("incompatible checkpoints:\n{0}")]
    Incompatible(CompatReport),

    #[error("malformed naming scheme: {0}")]
    MalformedScheme(String),

    #[error("no tensor name carries a layer index")]
    NoLayeredTensors,

    #[error("layer indices are not contiguous: missing {missing:?} below layer {max}")]
    LayerGap { missing: Vec<usize>, max: usize },

    #[error("layer {layer} out of range for a {count}-layer model")]
    LayerOutOfRange { layer: usize, count: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("expert weight undefined: aggregate delta MAV is zero")]
    UndefinedWeight,
}

pub type Result<T> = std::result::Result<T, Error>;

//! Crate-wide error type.
//!
//! Numeric kernels assume validated inputs and use `debug_assert!` for
//! index arithmetic; everything a caller can get wrong (shapes, rates,
//! file contents, configs) surfaces as an [`Error`] instead of a panic.

/// All failure modes of the public API.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    /// A dimension is zero or the element count overflows `usize`.
    #[error("invalid dimensions: {context}")]
    InvalidDim { context: String },

    /// `backward` was asked to differentiate a non-scalar value.
    #[error("loss must be a 1x1x1x1 scalar, got {shape:?}")]
    NotScalarLoss { shape: [usize; 4] },

    /// A value id does not belong to this tape.
    #[error("unknown tape id {id} (tape holds {len} values)")]
    UnknownId { id: usize, len: usize },

    /// Finite-difference step outside the supported range.
    #[error("gradient-check step {step:e} outside [1e-6, 1e-4]")]
    InvalidStep { step: f64 },

    /// Two evaluations of the checked function disagreed bitwise.
    #[error("forward function is not deterministic; disable dropout or fix the seed")]
    NonDeterministicForward,

    /// Dropout rate outside `[0, 1)`.
    #[error("dropout rate {rate} outside [0, 1)")]
    InvalidRate { rate: f64 },

    /// A tensor that must contain only 0.0 and 1.0 does not.
    #[error("non-binary values: {context}")]
    NonBinary { context: String },

    /// Input spatial dims are not divisible by `2^depth`.
    #[error("input {h}x{w} not divisible by 2^{depth}; pad or resize the data")]
    Divisibility { h: usize, w: usize, depth: usize },

    /// A parameter name was requested that the store does not hold.
    #[error("unknown parameter {name:?}")]
    UnknownParam { name: String },

    /// Checkpoint file is malformed or from an unknown format version.
    #[error("bad checkpoint: {reason}")]
    Checkpoint { reason: String },

    /// Configuration value is out of range or inconsistent.
    #[error("bad config: {reason}")]
    Config { reason: String },

    /// Dataset directory or file contents are unusable.
    #[error("bad data: {reason}")]
    Data { reason: String },

    /// A NaN or infinity appeared where finite values are required.
    #[error("non-finite values in {tensor}")]
    NonFinite { tensor: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("bad JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>) -> Self {
        Error::ShapeMismatch { context: context.into() }
    }

    pub(crate) fn data(reason: impl Into<String>) -> Self {
        Error::Data { reason: reason.into() }
    }
}

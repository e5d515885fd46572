use alloc::string::String;

pub type Result<T, E = QuantError> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuantError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: (usize, usize, usize), found: (usize, usize, usize) },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid length: expected {expected} values, found {found}")]
    InvalidLength { expected: usize, found: usize },
    #[error("dimension {dim} out of range for binary quantizers (1..=32)")]
    BinaryDimension { dim: usize },
    #[error("cannot quantize the zero vector onto the sphere")]
    ZeroVector,
    #[error("vector quantization requires a codebook")]
    MissingCodebook,
    #[error("{kind} quantization does not take a codebook")]
    UnexpectedCodebook { kind: &'static str },
    #[error("code {code} out of range (limit {limit})")]
    CodeOutOfRange { code: u32, limit: u64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid scale schedule: {0}")]
    InvalidSchedule(String),
    #[error("cannot fit {clusters} clusters to {samples} samples")]
    InsufficientSamples { samples: usize, clusters: usize },
    #[error("malformed variant name at position {position}: {message}")]
    VariantSyntax { position: usize, message: String },
}

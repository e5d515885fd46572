use std::io;

use thiserror::Error;
use xq_core::QuantError;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("truncated {what} at offset {offset}")]
    Truncated { what: &'static str, offset: usize },
    #[error("magic mismatch: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    BadVersion { expected: u8, found: u8 },
    #[error("invalid {what} at offset {offset}: {message}")]
    Invalid { what: &'static str, offset: usize, message: String },
    #[error("{count} trailing bytes after offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("code {code} out of range (limit {limit}) in branch {branch}, step {step} at offset {offset}")]
    CodeOutOfRange { branch: usize, step: usize, offset: usize, code: u32, limit: u64 },
    #[error(transparent)]
    Quant(#[from] QuantError),
}

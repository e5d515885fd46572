//! Codebook file:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "XQCB"
//! 4       1     version (1)
//! 5       3     reserved, zero
//! 8       4     J, u32
//! 12      4     d, u32
//! 16      4·J·d entries, f32, row-major
//! ```

use xq_core::Codebook;

use super::Reader;
use crate::error::FormatError;

pub const MAGIC: [u8; 4] = *b"XQCB";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;

/// Serializes `cb`, narrowing entries to `f32`.
pub fn write_codebook(cb: &Codebook) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * cb.entries().len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&[0; 3]);
    out.extend_from_slice(&(cb.size() as u32).to_le_bytes());
    out.extend_from_slice(&(cb.dim() as u32).to_le_bytes());
    for &v in cb.entries() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_codebook(bytes: &[u8]) -> Result<Codebook, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated { what: "header", offset: 0 });
    }
    let version = r.u8("header")?;
    if version != VERSION {
        return Err(FormatError::BadVersion { expected: VERSION, found: version });
    }
    if r.take(3, "header")? != [0, 0, 0] {
        return Err(FormatError::Invalid { what: "reserved bytes", offset: 5, message: "must be zero".into() });
    }
    let size = r.u32("header")? as usize;
    let dim = r.u32("header")? as usize;
    if size == 0 || dim == 0 {
        return Err(FormatError::Invalid {
            what: "header",
            offset: 8,
            message: format!("codebook extents must be positive, got {size}x{dim}"),
        });
    }
    let payload = size
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .filter(|&n| n <= bytes.len() - HEADER_LEN)
        .ok_or(FormatError::Truncated { what: "entries", offset: HEADER_LEN })?;
    let entries = r
        .take(payload, "entries")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    r.finish()?;
    Ok(Codebook::new(size, dim, entries)?)
}

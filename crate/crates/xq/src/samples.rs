//! Raw sample files: `M·d` little-endian `f32` values, row-major, with a
//! text sidecar `<path>.hdr` holding `count=M` and `dim=d` lines.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::FormatError;

#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Samples {
    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }
}

pub fn header_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".hdr");
    PathBuf::from(name)
}

pub fn encode_header(count: usize, dim: usize) -> String {
    format!("count={count}\ndim={dim}\n")
}

pub fn parse_header(text: &str) -> Result<(usize, usize), FormatError> {
    let invalid = |line: usize, message: String| FormatError::Invalid { what: "sample header", offset: line, message };
    let (mut count, mut dim) = (None, None);
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| invalid(n + 1, format!("expected key=value, got {line:?}")))?;
        let value: usize = value
            .trim()
            .parse()
            .map_err(|_| invalid(n + 1, format!("{:?} is not a non-negative integer", value.trim())))?;
        match key.trim() {
            "count" => count = Some(value),
            "dim" => dim = Some(value),
            other => return Err(invalid(n + 1, format!("unknown key {other:?}"))),
        }
    }
    match (count, dim) {
        (Some(c), Some(d)) if d > 0 => Ok((c, d)),
        (_, Some(0)) => Err(invalid(0, "dim must be positive".into())),
        _ => Err(invalid(0, "needs both count and dim".into())),
    }
}

pub fn decode_samples(bytes: &[u8], count: usize, dim: usize) -> Result<Samples, FormatError> {
    let expected = count.checked_mul(dim).and_then(|n| n.checked_mul(4));
    if expected != Some(bytes.len()) {
        return Err(FormatError::Invalid {
            what: "sample payload",
            offset: 0,
            message: format!("{} bytes for {count} samples of dim {dim}", bytes.len()),
        });
    }
    let data: Vec<f64> =
        bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    if let Some(k) = data.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::Invalid { what: "sample payload", offset: 4 * k, message: "non-finite value".into() });
    }
    Ok(Samples { dim, data })
}

pub fn encode_samples(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn read_samples(path: &Path) -> Result<Samples, FormatError> {
    let header = fs::read_to_string(header_path(path))?;
    let (count, dim) = parse_header(&header)?;
    decode_samples(&fs::read(path)?, count, dim)
}

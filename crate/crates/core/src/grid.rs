//! Numeric containers shared by every quantizer.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{QuantError, Result};

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(QuantError::NonFinite { index }),
        None => Ok(()),
    }
}

/// A `height × width` grid of `dim`-dimensional vectors, stored row-major
/// with the channel index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(QuantError::InvalidConfig(alloc::format!(
                "grid extents must be positive, got {height}x{width}x{dim}"
            )));
        }
        let expected = height * width * dim;
        if data.len() != expected {
            return Err(QuantError::InvalidLength { expected, found: data.len() });
        }
        check_finite(&data)?;
        Ok(Self { height, width, dim, data })
    }

    /// All-zero grid. Panics on a zero extent.
    pub fn zeros(height: usize, width: usize, dim: usize) -> Self {
        assert!(height > 0 && width > 0 && dim > 0, "grid extents must be positive");
        Self { height, width, dim, data: vec![0.0; height * width * dim] }
    }

    /// Builds a grid from a function of `(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        dim: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * dim);
        for y in 0..height {
            for x in 0..width {
                for c in 0..dim {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, dim, data)
    }

    pub(crate) fn from_parts_unchecked(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * dim);
        Self { height, width, dim, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.dim)
    }

    /// Side length if the grid is square.
    pub fn side(&self) -> Option<usize> {
        (self.height == self.width).then_some(self.height)
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn vector(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Vectors in row-major position order.
    pub fn vectors(&self) -> core::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub(crate) fn vectors_mut(&mut self) -> core::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.dim)
    }

    /// Sum of squared entries.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(QuantError::ShapeMismatch { expected: self.shape(), found: other.shape() });
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn sub_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
    }
}

/// Elementwise `a - b`.
pub fn grid_subtract(a: &FeatureGrid, b: &FeatureGrid) -> Result<FeatureGrid> {
    a.check_same_shape(b)?;
    let mut out = a.clone();
    out.sub_assign(b);
    Ok(out)
}

/// Mean squared difference over all scalars.
pub fn mse(a: &FeatureGrid, b: &FeatureGrid) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

/// An ordered table of `size` codewords in `dim` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    size: usize,
    dim: usize,
    entries: Vec<f64>,
}

impl Codebook {
    pub fn new(size: usize, dim: usize, entries: Vec<f64>) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(QuantError::InvalidConfig(alloc::format!(
                "codebook extents must be positive, got {size}x{dim}"
            )));
        }
        if size > u32::MAX as usize {
            return Err(QuantError::InvalidConfig(alloc::format!("codebook size {size} exceeds u32 codes")));
        }
        let expected = size * dim;
        if entries.len() != expected {
            return Err(QuantError::InvalidLength { expected, found: entries.len() });
        }
        check_finite(&entries)?;
        Ok(Self { size, dim, entries })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut entries = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(QuantError::DimensionMismatch { expected: dim, found: row.len() });
            }
            entries.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, entries)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn codeword(&self, code: usize) -> &[f64] {
        &self.entries[code * self.dim..(code + 1) * self.dim]
    }

    pub fn codewords(&self) -> core::slice::ChunksExact<'_, f64> {
        self.entries.chunks_exact(self.dim)
    }

    pub(crate) fn codeword_mut(&mut self, code: usize) -> &mut [f64] {
        &mut self.entries[code * self.dim..(code + 1) * self.dim]
    }

    /// Bits needed to address one codeword: `ceil(log2 size)`.
    pub fn bits_per_code(&self) -> u32 {
        ceil_log2(self.size as u64)
    }
}

pub(crate) fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Integer codes for each position of a `height × width` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeGrid {
    height: usize,
    width: usize,
    codes: Vec<u32>,
}

impl CodeGrid {
    pub fn new(height: usize, width: usize, codes: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(QuantError::InvalidConfig(alloc::format!(
                "code grid extents must be positive, got {height}x{width}"
            )));
        }
        if codes.len() != height * width {
            return Err(QuantError::InvalidLength { expected: height * width, found: codes.len() });
        }
        Ok(Self { height, width, codes })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn into_codes(self) -> Vec<u32> {
        self.codes
    }

    /// Fails on the first code `>= limit`.
    pub fn check_range(&self, limit: u64) -> Result<()> {
        match self.codes.iter().find(|&&c| c as u64 >= limit) {
            Some(&code) => Err(QuantError::CodeOutOfRange { code, limit }),
            None => Ok(()),
        }
    }
}

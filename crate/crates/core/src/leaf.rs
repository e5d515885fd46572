//! Leaf quantizers: nearest-codeword VQ and the two lookup-free binary
//! quantizers (LFQ, BSQ).

use alloc::vec::Vec;

use crate::error::{QuantError, Result};
use crate::grid::{CodeGrid, Codebook, FeatureGrid};

pub const MAX_BINARY_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LeafKind {
    Vq,
    Lfq,
    Bsq,
}

impl LeafKind {
    /// Letter used in variant names.
    pub fn letter(self) -> char {
        match self {
            LeafKind::Vq => 'V',
            LeafKind::Lfq => 'L',
            LeafKind::Bsq => 'B',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'V' => Some(LeafKind::Vq),
            'L' => Some(LeafKind::Lfq),
            'B' => Some(LeafKind::Bsq),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LeafKind::Vq => "VQ",
            LeafKind::Lfq => "LFQ",
            LeafKind::Bsq => "BSQ",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    pub code: u32,
    pub vector: Vec<f64>,
    /// `‖z − vector‖²`
    pub sq_error: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_finite(z: &[f64]) -> Result<()> {
    match z.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(QuantError::NonFinite { index }),
        None => Ok(()),
    }
}

fn check_binary_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_BINARY_DIM {
        return Err(QuantError::BinaryDimension { dim });
    }
    Ok(())
}

/// Index of the nearest codeword; ties go to the lowest index.
pub(crate) fn nearest(z: &[f64], cb: &Codebook) -> (u32, f64) {
    let mut best = 0u32;
    let mut best_dist = f64::INFINITY;
    for (j, e) in cb.codewords().enumerate() {
        let d = sq_dist(z, e);
        if d < best_dist {
            best_dist = d;
            best = j as u32;
        }
    }
    (best, best_dist)
}

/// Maps `z` to its closest codeword.
pub fn vq_quantize(z: &[f64], cb: &Codebook) -> Result<QuantizedVector> {
    if z.len() != cb.dim() {
        return Err(QuantError::DimensionMismatch { expected: cb.dim(), found: z.len() });
    }
    check_finite(z)?;
    let (code, sq_error) = nearest(z, cb);
    Ok(QuantizedVector { code, vector: cb.codeword(code as usize).to_vec(), sq_error })
}

/// Sign pattern code: bit `p` is set when component `p` is non-negative.
fn sign_code(z: &[f64]) -> u32 {
    z.iter().enumerate().fold(0u32, |code, (p, &v)| if v >= 0.0 { code | (1 << p) } else { code })
}

fn fill_binary(code: u32, magnitude: f64, out: &mut [f64]) {
    for (p, v) in out.iter_mut().enumerate() {
        *v = if code >> p & 1 == 1 { magnitude } else { -magnitude };
    }
}

fn bsq_magnitude(dim: usize) -> f64 {
    1.0 / libm::sqrt(dim as f64)
}

/// Per-dimension binarization to `{−1, +1}`; zero maps to `+1`.
pub fn lfq_quantize(z: &[f64]) -> Result<QuantizedVector> {
    check_binary_dim(z.len())?;
    check_finite(z)?;
    let code = sign_code(z);
    let mut vector = alloc::vec![0.0; z.len()];
    fill_binary(code, 1.0, &mut vector);
    let sq_error = sq_dist(z, &vector);
    Ok(QuantizedVector { code, vector, sq_error })
}

/// Binarizes `z / ‖z‖` onto the corners of the unit hypercube scaled to the
/// unit sphere (`±1/√d`).
pub fn bsq_quantize(z: &[f64]) -> Result<QuantizedVector> {
    check_binary_dim(z.len())?;
    check_finite(z)?;
    if z.iter().all(|&v| v == 0.0) {
        return Err(QuantError::ZeroVector);
    }
    // Dividing by a positive norm leaves every sign unchanged, so the code
    // can be read off `z` directly; this keeps the result exactly invariant
    // under positive rescaling.
    let code = sign_code(z);
    let mut vector = alloc::vec![0.0; z.len()];
    fill_binary(code, bsq_magnitude(z.len()), &mut vector);
    let sq_error = sq_dist(z, &vector);
    Ok(QuantizedVector { code, vector, sq_error })
}

/// A validated leaf quantizer: a kind together with its codebook, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Leaf<'a> {
    Vq(&'a Codebook),
    Lfq,
    Bsq,
}

impl<'a> Leaf<'a> {
    pub fn new(kind: LeafKind, codebook: Option<&'a Codebook>) -> Result<Self> {
        match (kind, codebook) {
            (LeafKind::Vq, Some(cb)) => Ok(Leaf::Vq(cb)),
            (LeafKind::Vq, None) => Err(QuantError::MissingCodebook),
            (LeafKind::Lfq, None) => Ok(Leaf::Lfq),
            (LeafKind::Bsq, None) => Ok(Leaf::Bsq),
            (kind, Some(_)) => Err(QuantError::UnexpectedCodebook { kind: kind.name() }),
        }
    }

    pub fn kind(&self) -> LeafKind {
        match self {
            Leaf::Vq(_) => LeafKind::Vq,
            Leaf::Lfq => LeafKind::Lfq,
            Leaf::Bsq => LeafKind::Bsq,
        }
    }

    /// Checks that vectors of `dim` channels can be quantized.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            Leaf::Vq(cb) if cb.dim() != dim => Err(QuantError::DimensionMismatch { expected: cb.dim(), found: dim }),
            Leaf::Vq(_) => Ok(()),
            Leaf::Lfq | Leaf::Bsq => check_binary_dim(dim),
        }
    }

    /// Number of distinct codes for vectors of `dim` channels.
    pub fn code_limit(&self, dim: usize) -> u64 {
        match self {
            Leaf::Vq(cb) => cb.size() as u64,
            Leaf::Lfq | Leaf::Bsq => 1u64 << dim,
        }
    }

    /// Information content of one code in bits.
    pub fn bits_per_code(&self, dim: usize) -> u32 {
        match self {
            Leaf::Vq(cb) => cb.bits_per_code(),
            Leaf::Lfq | Leaf::Bsq => dim as u32,
        }
    }

    pub fn quantize(&self, z: &[f64]) -> Result<QuantizedVector> {
        match self {
            Leaf::Vq(cb) => vq_quantize(z, cb),
            Leaf::Lfq => lfq_quantize(z),
            Leaf::Bsq => bsq_quantize(z),
        }
    }

    /// Writes the vector addressed by `code` into `out`.
    pub fn lookup_into(&self, code: u32, out: &mut [f64]) -> Result<()> {
        self.check_dim(out.len())?;
        let limit = self.code_limit(out.len());
        if code as u64 >= limit {
            return Err(QuantError::CodeOutOfRange { code, limit });
        }
        match self {
            Leaf::Vq(cb) => out.copy_from_slice(cb.codeword(code as usize)),
            Leaf::Lfq => fill_binary(code, 1.0, out),
            Leaf::Bsq => fill_binary(code, bsq_magnitude(out.len()), out),
        }
        Ok(())
    }

    /// Quantizes every position of `g`.
    ///
    /// Returns the quantized grid, the codes and the summed squared error.
    pub fn quantize_grid(&self, g: &FeatureGrid) -> Result<(FeatureGrid, CodeGrid, f64)> {
        self.check_dim(g.dim())?;
        let mut out = Vec::with_capacity(g.data().len());
        let mut codes = Vec::with_capacity(g.positions());
        let mut total = 0.0;
        for z in g.vectors() {
            let q = self.quantize(z)?;
            out.extend_from_slice(&q.vector);
            codes.push(q.code);
            total += q.sq_error;
        }
        let grid = FeatureGrid::from_parts_unchecked(g.height(), g.width(), g.dim(), out);
        Ok((grid, CodeGrid::new(g.height(), g.width(), codes)?, total))
    }

    /// Reconstructs a `dim`-channel grid from codes.
    pub fn decode_grid(&self, codes: &CodeGrid, dim: usize) -> Result<FeatureGrid> {
        let mut g = FeatureGrid::zeros(codes.height(), codes.width(), dim);
        for (&code, out) in codes.codes().iter().zip(g.vectors_mut()) {
            self.lookup_into(code, out)?;
        }
        Ok(g)
    }
}

/// Applies the leaf quantizer of `kind` at every grid position.
///
/// `cb` must be present exactly when `kind` is [`LeafKind::Vq`].
pub fn leaf_quantize_grid(
    g: &FeatureGrid,
    kind: LeafKind,
    cb: Option<&Codebook>,
) -> Result<(FeatureGrid, CodeGrid, f64)> {
    Leaf::new(kind, cb)?.quantize_grid(g)
}

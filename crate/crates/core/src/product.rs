//! Product quantization: contiguous channel chunks quantized independently
//! and concatenated back.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{QuantError, Result};
use crate::grid::{CodeGrid, FeatureGrid};
use crate::leaf::Leaf;
use crate::residual::{rq_encode_steps, ResidualConfig};

/// Channel widths of the product branches, in channel order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductConfig {
    dims: Vec<usize>,
}

impl ProductConfig {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(QuantError::InvalidConfig(format!("invalid branch widths {dims:?}")));
        }
        Ok(Self { dims })
    }

    /// `branches` equal chunks of a `dim`-channel vector. `dim` must divide evenly.
    pub fn equal(dim: usize, branches: usize) -> Result<Self> {
        if branches == 0 || !dim.is_multiple_of(branches) || dim == 0 {
            return Err(QuantError::InvalidConfig(format!(
                "{dim} channels cannot be split into {branches} equal branches"
            )));
        }
        Self::new(vec![dim / branches; branches])
    }

    pub fn branches(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }
}

/// Splits the channels of `g` into one grid per branch.
pub fn pq_split(g: &FeatureGrid, cfg: &ProductConfig) -> Result<Vec<FeatureGrid>> {
    if cfg.total_dim() != g.dim() {
        return Err(QuantError::DimensionMismatch { expected: cfg.total_dim(), found: g.dim() });
    }
    let mut parts: Vec<Vec<f64>> = cfg.dims().iter().map(|d| Vec::with_capacity(d * g.positions())).collect();
    for z in g.vectors() {
        let mut offset = 0;
        for (part, &d) in parts.iter_mut().zip(cfg.dims()) {
            part.extend_from_slice(&z[offset..offset + d]);
            offset += d;
        }
    }
    Ok(parts
        .into_iter()
        .zip(cfg.dims())
        .map(|(data, &d)| FeatureGrid::from_parts_unchecked(g.height(), g.width(), d, data))
        .collect())
}

/// Channel-wise concatenation of branch grids.
pub fn pq_join(parts: &[FeatureGrid]) -> Result<FeatureGrid> {
    let first = parts.first().ok_or_else(|| QuantError::InvalidConfig("no branches to join".into()))?;
    let (h, w) = (first.height(), first.width());
    for p in parts {
        if (p.height(), p.width()) != (h, w) {
            return Err(QuantError::ShapeMismatch { expected: (h, w, p.dim()), found: p.shape() });
        }
    }
    let dim: usize = parts.iter().map(FeatureGrid::dim).sum();
    let mut data = Vec::with_capacity(h * w * dim);
    for pos in 0..h * w {
        for p in parts {
            data.extend_from_slice(&p.data()[pos * p.dim()..(pos + 1) * p.dim()]);
        }
    }
    Ok(FeatureGrid::from_parts_unchecked(h, w, dim, data))
}

/// Result of quantizing one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    pub quantized: FeatureGrid,
    /// One code grid per residual step (a single entry for a leaf).
    pub codes: Vec<CodeGrid>,
    pub sq_error: f64,
}

/// Anything that can quantize one branch grid.
pub trait GridQuantizer {
    fn quantize(&self, g: &FeatureGrid) -> Result<BranchOutput>;
}

impl GridQuantizer for Leaf<'_> {
    fn quantize(&self, g: &FeatureGrid) -> Result<BranchOutput> {
        let (quantized, codes, sq_error) = self.quantize_grid(g)?;
        Ok(BranchOutput { quantized, codes: vec![codes], sq_error })
    }
}

/// Inference-mode residual quantization (all steps active).
impl GridQuantizer for ResidualConfig<'_> {
    fn quantize(&self, g: &FeatureGrid) -> Result<BranchOutput> {
        self.validate()?;
        let trace = rq_encode_steps(g, &self.leaf, self.steps)?;
        let quantized = crate::residual::rq_sum(&trace);
        Ok(BranchOutput { quantized, codes: trace.codes, sq_error: trace.residual.sq_norm() })
    }
}

/// Product-quantizes `g` with one quantizer per branch.
///
/// Returns the concatenated output, each branch's code grids and the total
/// squared error.
pub fn pq_quantize(
    g: &FeatureGrid,
    cfg: &ProductConfig,
    quantizers: &[&dyn GridQuantizer],
) -> Result<(FeatureGrid, Vec<Vec<CodeGrid>>, f64)> {
    if quantizers.len() != cfg.branches() {
        return Err(QuantError::InvalidConfig(format!(
            "{} quantizers for {} branches",
            quantizers.len(),
            cfg.branches()
        )));
    }
    let parts = pq_split(g, cfg)?;
    let outputs = parts.iter().zip(quantizers).map(|(part, q)| q.quantize(part)).collect::<Result<Vec<_>>>()?;
    let total = outputs.iter().map(|o| o.sq_error).sum();
    let (grids, codes): (Vec<_>, Vec<_>) = outputs.into_iter().map(|o| (o.quantized, o.codes)).unzip();
    Ok((pq_join(&grids)?, codes, total))
}

use alloc::format;
use alloc::vec::Vec;

use crate::error::{QuantError, Result};
use crate::grid::{Codebook, FeatureGrid};
use crate::hierarchy::HierarchySpec;
use crate::leaf::{Leaf, LeafKind};
use crate::multiscale::{msrq_encode_steps, resample};
use crate::product::pq_split;
use crate::residual::rq_encode_steps;
use crate::rng::Rng;

use super::kmeans::kmeans_fit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    pub codebook_size: usize,
    pub iters: usize,
    /// Extra rounds that re-cluster the inputs seen by every residual step.
    /// Ignored for single-step variants.
    pub refine_rounds: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { codebook_size: 256, iters: 20, refine_rounds: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// One codebook per product branch; empty for LFQ and BSQ.
    pub codebooks: Vec<Codebook>,
    /// Objective trace of the final clustering of each branch.
    pub objectives: Vec<Vec<f64>>,
}

impl FitReport {
    /// Mean of the branches' final objectives.
    pub fn final_objective(&self) -> Option<f64> {
        let finals: Vec<f64> = self.objectives.iter().filter_map(|o| o.last().copied()).collect();
        (!finals.is_empty()).then(|| finals.iter().sum::<f64>() / finals.len() as f64)
    }
}

/// Every vector presented to the leaf quantizer while encoding `part`.
fn step_inputs(part: &FeatureGrid, spec: &HierarchySpec, leaf: &Leaf<'_>, out: &mut Vec<f64>) -> Result<()> {
    let steps = spec.variant.steps;
    let trace = if spec.variant.multiscale {
        msrq_encode_steps(part, &spec.schedule, leaf, &spec.blend, steps)?
    } else {
        rq_encode_steps(part, leaf, steps)?
    };
    let mut residual = part.clone();
    for (i, step) in trace.steps.iter().enumerate() {
        if spec.variant.multiscale {
            out.extend_from_slice(resample(&residual, spec.schedule.sides()[i])?.data());
        } else {
            out.extend_from_slice(residual.data());
        }
        residual.sub_assign(step);
    }
    Ok(())
}

/// Learns one VQ codebook per product branch from training grids.
///
/// Branch codebooks start as k-means over the branch vectors. For
/// multi-step variants each refinement round encodes the training grids with
/// the current codebooks and re-clusters the pooled inputs of all steps, so
/// the shared codebook also covers the residual scales.
///
/// Multi-scale variants need square grids matching `spec.side`; otherwise
/// grids may have any shape. LFQ and BSQ have nothing to learn.
pub fn fit_codebooks(
    grids: &[FeatureGrid],
    spec: &HierarchySpec,
    opts: &FitOptions,
    rng: &mut Rng,
) -> Result<FitReport> {
    spec.validate()?;
    if spec.variant.leaf != LeafKind::Vq {
        return Ok(FitReport { codebooks: Vec::new(), objectives: Vec::new() });
    }
    if grids.is_empty() {
        return Err(QuantError::InsufficientSamples { samples: 0, clusters: opts.codebook_size });
    }
    for g in grids {
        if g.dim() != spec.dim {
            return Err(QuantError::DimensionMismatch { expected: spec.dim, found: g.dim() });
        }
        if spec.variant.multiscale && g.side() != Some(spec.side) {
            return Err(QuantError::InvalidConfig(format!(
                "multi-scale fitting needs {0}x{0} grids, got {1}x{2}",
                spec.side,
                g.height(),
                g.width()
            )));
        }
    }
    let product = spec.product();
    let parts: Vec<Vec<FeatureGrid>> = grids.iter().map(|g| pq_split(g, &product)).collect::<Result<_>>()?;
    let branch_dim = spec.branch_dim();

    let mut codebooks = Vec::with_capacity(product.branches());
    let mut objectives = Vec::with_capacity(product.branches());
    for b in 0..product.branches() {
        let samples: Vec<f64> = parts.iter().flat_map(|p| p[b].data().iter().copied()).collect();
        let fit = kmeans_fit(&samples, branch_dim, opts.codebook_size, opts.iters, rng)?;
        codebooks.push(fit.codebook);
        objectives.push(fit.objective);
    }

    if spec.variant.steps > 1 {
        for _ in 0..opts.refine_rounds {
            for b in 0..product.branches() {
                let leaf = Leaf::Vq(&codebooks[b]);
                let mut pooled = Vec::new();
                for p in &parts {
                    step_inputs(&p[b], spec, &leaf, &mut pooled)?;
                }
                let fit = kmeans_fit(&pooled, branch_dim, opts.codebook_size, opts.iters, rng)?;
                codebooks[b] = fit.codebook;
                objectives[b] = fit.objective;
            }
        }
    }
    Ok(FitReport { codebooks, objectives })
}

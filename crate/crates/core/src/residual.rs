//! Residual quantization with a single codebook shared across steps, and
//! training-time quantizer dropout.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{QuantError, Result};
use crate::grid::{CodeGrid, FeatureGrid};
use crate::leaf::Leaf;
use crate::rng::Rng;

/// Quantizer dropout: during training, with probability `ratio` a call keeps
/// only the first `n` steps, `n` uniform in `start..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub ratio: f64,
    pub start: usize,
}

impl Default for Dropout {
    fn default() -> Self {
        Self { ratio: 0.1, start: 3 }
    }
}

impl Dropout {
    pub const DISABLED: Dropout = Dropout { ratio: 0.0, start: 1 };

    /// Default dropout with `start` clamped so it is valid for `steps`.
    pub fn default_for(steps: usize) -> Self {
        let d = Self::default();
        Self { start: d.start.min(steps.max(1)), ..d }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(QuantError::InvalidConfig(format!("dropout ratio {} not in [0, 1]", self.ratio)));
        }
        if self.start == 0 || self.start > steps {
            return Err(QuantError::InvalidConfig(format!("dropout start {} not in [1, {steps}]", self.start)));
        }
        Ok(())
    }

    /// Number of active steps for one call.
    ///
    /// Inference never touches `rng`. Training draws one Bernoulli word and,
    /// when it fires, one uniform step count.
    pub fn active_steps(&self, steps: usize, training: bool, rng: &mut Rng) -> usize {
        if !training {
            return steps;
        }
        if rng.next_f64() < self.ratio {
            self.start + rng.below((steps - self.start + 1) as u64) as usize
        } else {
            steps
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualConfig<'a> {
    pub steps: usize,
    pub dropout: Dropout,
    pub leaf: Leaf<'a>,
}

impl<'a> ResidualConfig<'a> {
    pub fn new(steps: usize, leaf: Leaf<'a>) -> Result<Self> {
        let cfg = Self { steps, dropout: Dropout::default_for(steps), leaf };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_dropout(mut self, dropout: Dropout) -> Result<Self> {
        self.dropout = dropout;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(QuantError::InvalidConfig("residual steps must be at least 1".into()));
        }
        self.dropout.validate(self.steps)
    }
}

/// Per-step record of a residual encode.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTrace {
    /// Full-resolution quantized contribution of each active step.
    pub steps: Vec<FeatureGrid>,
    /// Codes of each active step, at that step's native resolution.
    pub codes: Vec<CodeGrid>,
    /// `‖r_{i+1}‖₂` over the whole grid after each step.
    pub residual_norms: Vec<f64>,
    /// Residual left after the last active step.
    pub residual: FeatureGrid,
}

impl ResidualTrace {
    pub fn active_steps(&self) -> usize {
        self.steps.len()
    }

    /// Squared reconstruction error after each step.
    pub fn step_sq_errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.residual_norms.iter().map(|n| n * n)
    }

    pub(crate) fn record(&mut self, step: FeatureGrid, codes: CodeGrid) {
        self.residual.sub_assign(&step);
        self.residual_norms.push(libm::sqrt(self.residual.sq_norm()));
        self.steps.push(step);
        self.codes.push(codes);
    }

    pub(crate) fn start(g: &FeatureGrid, capacity: usize) -> Self {
        Self {
            steps: Vec::with_capacity(capacity),
            codes: Vec::with_capacity(capacity),
            residual_norms: Vec::with_capacity(capacity),
            residual: g.clone(),
        }
    }
}

/// Runs exactly `active` residual steps.
pub(crate) fn rq_encode_steps(g: &FeatureGrid, leaf: &Leaf<'_>, active: usize) -> Result<ResidualTrace> {
    leaf.check_dim(g.dim())?;
    let mut trace = ResidualTrace::start(g, active);
    for _ in 0..active {
        let (quantized, codes, _) = leaf.quantize_grid(&trace.residual)?;
        trace.record(quantized, codes);
    }
    Ok(trace)
}

/// Residual-quantizes `g`: each step quantizes what the previous steps left.
pub fn rq_encode(g: &FeatureGrid, cfg: &ResidualConfig<'_>, training: bool, rng: &mut Rng) -> Result<ResidualTrace> {
    cfg.validate()?;
    cfg.leaf.check_dim(g.dim())?;
    let active = cfg.dropout.active_steps(cfg.steps, training, rng);
    rq_encode_steps(g, &cfg.leaf, active)
}

/// Sum of per-step grids in step order.
pub(crate) fn sum_grids<'g>(mut grids: impl Iterator<Item = &'g FeatureGrid>) -> Option<FeatureGrid> {
    let mut total = grids.next()?.clone();
    for g in grids {
        total.add_assign(g);
    }
    Some(total)
}

/// Final quantized output: the sum of all active step contributions.
///
/// Panics on an empty trace, which encoding never produces.
pub fn rq_sum(trace: &ResidualTrace) -> FeatureGrid {
    sum_grids(trace.steps.iter()).expect("residual trace has no steps")
}

/// Reconstructs a `dim`-channel grid from per-step codes.
pub fn rq_decode(codes: &[CodeGrid], leaf: &Leaf<'_>, dim: usize) -> Result<FeatureGrid> {
    let first = codes.first().ok_or_else(|| QuantError::InvalidConfig("no residual steps to decode".into()))?;
    let mut steps = Vec::with_capacity(codes.len());
    for c in codes {
        if (c.height(), c.width()) != (first.height(), first.width()) {
            return Err(QuantError::ShapeMismatch {
                expected: (first.height(), first.width(), dim),
                found: (c.height(), c.width(), dim),
            });
        }
        steps.push(leaf.decode_grid(c, dim)?);
    }
    Ok(sum_grids(steps.iter()).expect("non-empty"))
}

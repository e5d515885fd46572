//! Composition of product branches, residual steps, leaf quantizers and
//! optional multi-scale coding, plus the ASCII variant-name grammar
//! `XQ[-MS]-{V|L|B}[-R<N>][-P<P>]`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{QuantError, Result};
use crate::grid::{CodeGrid, Codebook, FeatureGrid};
use crate::leaf::{Leaf, LeafKind, MAX_BINARY_DIM};
use crate::multiscale::{msrq_decode, msrq_encode_steps, BlendFilter, ScaleSchedule};
use crate::product::{pq_join, pq_split, ProductConfig};
use crate::residual::{rq_decode, rq_encode_steps, rq_sum, Dropout, ResidualTrace};
use crate::rng::Rng;
use crate::training::{entropy_aux, vq_loss, DEFAULT_BETA, DEFAULT_TEMPERATURE};

/// Largest step or branch count a name may carry (both are stored as one byte).
pub const MAX_COUNT: usize = 255;

/// The structural part of a hierarchy, as spelled by its name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub multiscale: bool,
    pub leaf: LeafKind,
    pub steps: usize,
    pub branches: usize,
}

impl Default for Variant {
    fn default() -> Self {
        Self { multiscale: false, leaf: LeafKind::Vq, steps: 1, branches: 1 }
    }
}

fn syntax(position: usize, message: impl Into<String>) -> QuantError {
    QuantError::VariantSyntax { position, message: message.into() }
}

fn parse_count(token: &str, position: usize) -> Result<usize> {
    let digits = &token[1..];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(syntax(position + 1, format!("expected a count after '{}'", &token[..1])));
    }
    if digits.starts_with('0') {
        return Err(syntax(position + 1, "count must be a positive integer without leading zeros"));
    }
    match digits.parse::<usize>() {
        Ok(n) if n <= MAX_COUNT => Ok(n),
        _ => Err(syntax(position + 1, format!("count exceeds {MAX_COUNT}"))),
    }
}

impl Variant {
    pub fn parse(name: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut offset = 0;
        for token in name.split('-') {
            tokens.push((offset, token));
            offset += token.len() + 1;
        }
        let mut it = tokens.into_iter().peekable();

        match it.next() {
            Some((_, "XQ")) => {}
            _ => return Err(syntax(0, "name must start with 'XQ'")),
        }
        let mut variant = Variant::default();
        if let Some(&(_, "MS")) = it.peek() {
            variant.multiscale = true;
            it.next();
        }
        let Some((pos, leaf)) = it.next() else {
            return Err(syntax(name.len(), "missing leaf letter (V, L or B)"));
        };
        let mut chars = leaf.chars();
        variant.leaf = match (chars.next().and_then(LeafKind::from_letter), chars.next()) {
            (Some(kind), None) => kind,
            _ => return Err(syntax(pos, format!("expected leaf letter V, L or B, found '{leaf}'"))),
        };
        if let Some(&(pos, token)) = it.peek() {
            if token.starts_with('R') {
                variant.steps = parse_count(token, pos)?;
                it.next();
            }
        }
        if let Some(&(pos, token)) = it.peek() {
            if token.starts_with('P') {
                variant.branches = parse_count(token, pos)?;
                it.next();
            }
        }
        if let Some((pos, token)) = it.next() {
            return Err(syntax(pos, format!("unexpected token '{token}'")));
        }
        Ok(variant)
    }
}

impl fmt::Display for Variant {
    /// Canonical name: `R1` and `P1` are omitted.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("XQ")?;
        if self.multiscale {
            f.write_str("-MS")?;
        }
        write!(f, "-{}", self.leaf.letter())?;
        if self.steps != 1 {
            write!(f, "-R{}", self.steps)?;
        }
        if self.branches != 1 {
            write!(f, "-P{}", self.branches)?;
        }
        Ok(())
    }
}

impl FromStr for Variant {
    type Err = QuantError;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

pub fn parse_variant(name: &str) -> Result<Variant> {
    Variant::parse(name)
}

pub fn format_variant(variant: &Variant) -> String {
    format!("{variant}")
}

/// Full configuration of a hierarchical quantizer over `side × side` grids
/// of `dim`-channel vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchySpec {
    pub variant: Variant,
    pub dim: usize,
    pub side: usize,
    /// One side per residual step; every entry equals `side` unless multi-scale.
    pub schedule: ScaleSchedule,
    pub dropout: Dropout,
    pub blend: BlendFilter,
}

impl HierarchySpec {
    /// Defaults: geometric schedule when multi-scale, default dropout and blend.
    pub fn new(variant: Variant, dim: usize, side: usize) -> Result<Self> {
        if variant.steps == 0 || variant.steps > MAX_COUNT {
            return Err(QuantError::InvalidConfig(format!("residual steps {} not in [1, {MAX_COUNT}]", variant.steps)));
        }
        let schedule = if variant.multiscale {
            ScaleSchedule::geometric(variant.steps, side)?
        } else {
            ScaleSchedule::full(variant.steps, side)?
        };
        let spec = Self {
            variant,
            dim,
            side,
            schedule,
            dropout: Dropout::default_for(variant.steps),
            blend: BlendFilter::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_schedule(mut self, schedule: ScaleSchedule) -> Result<Self> {
        self.schedule = schedule;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dropout(mut self, dropout: Dropout) -> Result<Self> {
        self.dropout = dropout;
        self.validate()?;
        Ok(self)
    }

    pub fn with_blend(mut self, blend: BlendFilter) -> Self {
        self.blend = blend;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.variant;
        if v.branches == 0 || v.branches > MAX_COUNT {
            return Err(QuantError::InvalidConfig(format!("product branches {} not in [1, {MAX_COUNT}]", v.branches)));
        }
        if v.steps == 0 || v.steps > MAX_COUNT {
            return Err(QuantError::InvalidConfig(format!("residual steps {} not in [1, {MAX_COUNT}]", v.steps)));
        }
        if self.side == 0 || self.side > u16::MAX as usize {
            return Err(QuantError::InvalidConfig(format!("grid side {} out of range", self.side)));
        }
        let product = ProductConfig::equal(self.dim, v.branches)?;
        let branch_dim = product.dims()[0];
        if v.leaf != LeafKind::Vq && branch_dim > MAX_BINARY_DIM {
            return Err(QuantError::BinaryDimension { dim: branch_dim });
        }
        if self.schedule.steps() != v.steps {
            return Err(QuantError::InvalidSchedule(format!(
                "{} scales for {} residual steps",
                self.schedule.steps(),
                v.steps
            )));
        }
        self.schedule.check_grid(self.side)?;
        if !v.multiscale && self.schedule.sides().iter().any(|&s| s != self.side) {
            return Err(QuantError::InvalidSchedule("single-scale variants code every step at full resolution".into()));
        }
        self.dropout.validate(v.steps)
    }

    pub fn branch_dim(&self) -> usize {
        self.dim / self.variant.branches
    }

    pub fn product(&self) -> ProductConfig {
        ProductConfig::equal(self.dim, self.variant.branches).expect("validated")
    }

    /// One leaf per branch. VQ needs one codebook per branch; LFQ and BSQ none.
    pub fn leaves<'a>(&self, codebooks: &'a [Codebook]) -> Result<Vec<Leaf<'a>>> {
        let branches = self.variant.branches;
        match self.variant.leaf {
            LeafKind::Vq => {
                if codebooks.len() != branches {
                    return Err(QuantError::InvalidConfig(format!(
                        "{} codebooks for {branches} branches",
                        codebooks.len()
                    )));
                }
                let leaves: Vec<Leaf<'a>> = codebooks.iter().map(Leaf::Vq).collect();
                for leaf in &leaves {
                    leaf.check_dim(self.branch_dim())?;
                }
                Ok(leaves)
            }
            kind if !codebooks.is_empty() => Err(QuantError::UnexpectedCodebook { kind: kind.name() }),
            LeafKind::Lfq => Ok(alloc::vec![Leaf::Lfq; branches]),
            LeafKind::Bsq => Ok(alloc::vec![Leaf::Bsq; branches]),
        }
    }

    /// Information content of the first `active` steps, in bits.
    pub fn bits(&self, codebooks: &[Codebook], active: usize) -> Result<u64> {
        let tokens = self.schedule.tokens(active);
        Ok(self.leaves(codebooks)?.iter().map(|leaf| tokens * leaf.bits_per_code(self.branch_dim()) as u64).sum())
    }

    /// Tokens produced by the first `active` steps over all branches.
    pub fn tokens(&self, active: usize) -> u64 {
        self.variant.branches as u64 * self.schedule.tokens(active)
    }
}

/// Codes indexed by `[branch][step]`; every branch has the same number of
/// active steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeTensor {
    branches: Vec<Vec<CodeGrid>>,
}

impl CodeTensor {
    pub fn new(branches: Vec<Vec<CodeGrid>>) -> Result<Self> {
        let active = branches.first().map(Vec::len).unwrap_or(0);
        if active == 0 || branches.iter().any(|b| b.len() != active) {
            return Err(QuantError::InvalidConfig("every branch needs the same nonzero number of steps".into()));
        }
        Ok(Self { branches })
    }

    pub fn branches(&self) -> &[Vec<CodeGrid>] {
        &self.branches
    }

    pub fn active_steps(&self) -> usize {
        self.branches[0].len()
    }

    pub fn get(&self, branch: usize, step: usize) -> &CodeGrid {
        &self.branches[branch][step]
    }

    pub fn total_codes(&self) -> usize {
        self.branches.iter().flatten().map(|c| c.codes().len()).sum()
    }
}

/// Scalar loss terms reported alongside an encode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub recon: f64,
    pub vq: f64,
    /// Entropy auxiliary term; zero for VQ leaves.
    pub aux: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantOutcome {
    pub quantized: FeatureGrid,
    pub codes: CodeTensor,
    /// Squared error `‖g − Σ_{j≤i} z′_j‖²` after each active step.
    pub step_sq_errors: Vec<f64>,
    pub losses: LossTerms,
    pub total_bits: u64,
}

impl QuantOutcome {
    pub fn active_steps(&self) -> usize {
        self.codes.active_steps()
    }
}

fn check_input(g: &FeatureGrid, spec: &HierarchySpec) -> Result<()> {
    let expected = (spec.side, spec.side, spec.dim);
    if g.shape() != expected {
        return Err(QuantError::ShapeMismatch { expected, found: g.shape() });
    }
    Ok(())
}

/// Encodes `g`. A single dropout draw is shared by all branches.
pub fn hier_encode(
    g: &FeatureGrid,
    spec: &HierarchySpec,
    codebooks: &[Codebook],
    training: bool,
    rng: &mut Rng,
) -> Result<QuantOutcome> {
    spec.validate()?;
    check_input(g, spec)?;
    let leaves = spec.leaves(codebooks)?;
    let active = spec.dropout.active_steps(spec.variant.steps, training, rng);
    let parts = pq_split(g, &spec.product())?;

    let traces = parts
        .iter()
        .zip(&leaves)
        .map(|(part, leaf)| {
            if spec.variant.multiscale {
                msrq_encode_steps(part, &spec.schedule, leaf, &spec.blend, active)
            } else {
                rq_encode_steps(part, leaf, active)
            }
        })
        .collect::<Result<Vec<ResidualTrace>>>()?;

    let quantized = pq_join(&traces.iter().map(rq_sum).collect::<Vec<_>>())?;
    let step_sq_errors =
        (0..active).map(|i| traces.iter().map(|t| t.residual_norms[i] * t.residual_norms[i]).sum()).collect();
    let aux = match spec.variant.leaf {
        LeafKind::Vq => 0.0,
        _ => {
            let total: f64 =
                parts.iter().map(|p| entropy_aux(p, DEFAULT_TEMPERATURE)).collect::<Result<Vec<_>>>()?.iter().sum();
            total / parts.len() as f64
        }
    };
    let losses = LossTerms { recon: crate::grid::mse(g, &quantized)?, vq: vq_loss(g, &quantized, DEFAULT_BETA)?, aux };
    let total_bits = spec.bits(codebooks, active)?;
    let codes = CodeTensor::new(traces.into_iter().map(|t| t.codes).collect())?;
    Ok(QuantOutcome { quantized, codes, step_sq_errors, losses, total_bits })
}

/// Reconstructs the grid addressed by `codes`.
pub fn hier_decode(codes: &CodeTensor, spec: &HierarchySpec, codebooks: &[Codebook]) -> Result<FeatureGrid> {
    spec.validate()?;
    let leaves = spec.leaves(codebooks)?;
    if codes.branches().len() != leaves.len() {
        return Err(QuantError::InvalidConfig(format!(
            "{} code branches for {} product branches",
            codes.branches().len(),
            leaves.len()
        )));
    }
    if codes.active_steps() > spec.variant.steps {
        return Err(QuantError::InvalidConfig(format!(
            "{} code steps for {} residual steps",
            codes.active_steps(),
            spec.variant.steps
        )));
    }
    let dim = spec.branch_dim();
    let parts = codes
        .branches()
        .iter()
        .zip(&leaves)
        .map(|(steps, leaf)| {
            if spec.variant.multiscale {
                msrq_decode(steps, &spec.schedule, leaf, &spec.blend, dim)
            } else {
                for c in steps {
                    if (c.height(), c.width()) != (spec.side, spec.side) {
                        return Err(QuantError::ShapeMismatch {
                            expected: (spec.side, spec.side, dim),
                            found: (c.height(), c.width(), dim),
                        });
                    }
                }
                rq_decode(steps, leaf, dim)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    pq_join(&parts)
}

//! Code stream file:
//!
//! ```text
//! magic "XQCS" | version u8 | name length u16 | canonical variant name
//! K u16 | schedule length u8 | s_i u16 ... | P u8 | n u8
//! codes u32, branch-major then step, s_i * s_i per block
//! ```

use xq_core::{BlendFilter, CodeGrid, CodeTensor, Dropout, HierarchySpec, QuantOutcome, ScaleSchedule, Variant};

use super::Reader;
use crate::error::FormatError;

pub const MAGIC: [u8; 4] = *b"XQCS";
pub const VERSION: u8 = 1;

/// Everything needed to decode a grid apart from codebooks, channel count
/// and blend settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeStream {
    variant: Variant,
    side: usize,
    schedule: ScaleSchedule,
    codes: CodeTensor,
}

impl CodeStream {
    pub fn new(variant: Variant, side: usize, schedule: ScaleSchedule, codes: CodeTensor) -> Result<Self, FormatError> {
        let stream = Self { variant, side, schedule, codes };
        stream.validate()?;
        Ok(stream)
    }

    pub fn from_outcome(spec: &HierarchySpec, outcome: &QuantOutcome) -> Result<Self, FormatError> {
        Self::new(spec.variant, spec.side, spec.schedule.clone(), outcome.codes.clone())
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn schedule(&self) -> &ScaleSchedule {
        &self.schedule
    }

    pub fn codes(&self) -> &CodeTensor {
        &self.codes
    }

    pub fn active_steps(&self) -> usize {
        self.codes.active_steps()
    }

    pub fn tokens(&self) -> u64 {
        self.variant.branches as u64 * self.schedule.tokens(self.active_steps())
    }

    /// Rebuilds the hierarchy for `dim` channels. Dropout is irrelevant to
    /// decoding and left disabled.
    pub fn spec(&self, dim: usize, blend: BlendFilter) -> Result<HierarchySpec, FormatError> {
        Ok(HierarchySpec::new(self.variant, dim, self.side)?
            .with_schedule(self.schedule.clone())?
            .with_dropout(Dropout::DISABLED)?
            .with_blend(blend))
    }

    fn validate(&self) -> Result<(), FormatError> {
        let invalid = |message: String| FormatError::Invalid { what: "stream", offset: 0, message };
        let v = &self.variant;
        if self.side == 0 || self.side > u16::MAX as usize {
            return Err(invalid(format!("grid side {} out of range", self.side)));
        }
        if self.schedule.steps() != v.steps {
            return Err(invalid(format!("{} scales for {} residual steps", self.schedule.steps(), v.steps)));
        }
        self.schedule.check_grid(self.side)?;
        if !v.multiscale && self.schedule.sides().iter().any(|&s| s != self.side) {
            return Err(invalid("single-scale schedule must stay at the grid side".into()));
        }
        if self.codes.branches().len() != v.branches {
            return Err(invalid(format!(
                "{} code branches for {} product branches",
                self.codes.branches().len(),
                v.branches
            )));
        }
        if self.active_steps() > v.steps {
            return Err(invalid(format!("{} active steps for {} residual steps", self.active_steps(), v.steps)));
        }
        for steps in self.codes.branches() {
            for (grid, &s) in steps.iter().zip(self.schedule.sides()) {
                if (grid.height(), grid.width()) != (s, s) {
                    return Err(invalid(format!("code grid {}x{} at scale {s}", grid.height(), grid.width())));
                }
            }
        }
        Ok(())
    }
}

pub fn write_stream(stream: &CodeStream) -> Vec<u8> {
    let name = stream.variant.to_string();
    let mut out = Vec::with_capacity(16 + name.len() + 4 * stream.codes.total_codes());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(stream.side as u16).to_le_bytes());
    out.push(stream.schedule.steps() as u8);
    for &s in stream.schedule.sides() {
        out.extend_from_slice(&(s as u16).to_le_bytes());
    }
    out.push(stream.variant.branches as u8);
    out.push(stream.active_steps() as u8);
    for steps in stream.codes.branches() {
        for grid in steps {
            for &code in grid.codes() {
                out.extend_from_slice(&code.to_le_bytes());
            }
        }
    }
    out
}

/// Parses a stream without range-checking codes.
pub fn read_stream(bytes: &[u8]) -> Result<CodeStream, FormatError> {
    read(bytes, None)
}

/// Parses a stream and rejects any code of branch `b` at or above `limits[b]`.
pub fn read_stream_checked(bytes: &[u8], limits: &[u64]) -> Result<CodeStream, FormatError> {
    read(bytes, Some(limits))
}

fn read(bytes: &[u8], limits: Option<&[u64]>) -> Result<CodeStream, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u8("header")?;
    if version != VERSION {
        return Err(FormatError::BadVersion { expected: VERSION, found: version });
    }

    let name_len = r.u16("variant name length")? as usize;
    let name_at = r.pos();
    let name = r.take(name_len, "variant name")?;
    let name = std::str::from_utf8(name).ok().filter(|s| s.is_ascii()).ok_or_else(|| FormatError::Invalid {
        what: "variant name",
        offset: name_at,
        message: "not ASCII".into(),
    })?;
    let variant = Variant::parse(name).map_err(|e| FormatError::Invalid {
        what: "variant name",
        offset: name_at,
        message: e.to_string(),
    })?;
    if variant.to_string() != name {
        return Err(FormatError::Invalid {
            what: "variant name",
            offset: name_at,
            message: format!("{name:?} is not canonical (expected {variant})"),
        });
    }

    let side_at = r.pos();
    let side = r.u16("grid side")? as usize;
    if side == 0 {
        return Err(FormatError::Invalid { what: "grid side", offset: side_at, message: "must be positive".into() });
    }
    let sched_at = r.pos();
    let sched_len = r.u8("schedule length")? as usize;
    if sched_len != variant.steps {
        return Err(FormatError::Invalid {
            what: "schedule length",
            offset: sched_at,
            message: format!("{sched_len} scales for {} residual steps", variant.steps),
        });
    }
    let mut sides = Vec::with_capacity(sched_len);
    for _ in 0..sched_len {
        sides.push(r.u16("schedule")? as usize);
    }
    let invalid_schedule = |message: String| FormatError::Invalid { what: "schedule", offset: sched_at + 1, message };
    let schedule = ScaleSchedule::new(sides).map_err(|e| invalid_schedule(e.to_string()))?;
    schedule.check_grid(side).map_err(|e| invalid_schedule(e.to_string()))?;
    if !variant.multiscale && schedule.sides().iter().any(|&s| s != side) {
        return Err(invalid_schedule(format!("single-scale schedule must stay at grid side {side}")));
    }

    let branches_at = r.pos();
    let branches = r.u8("branch count")? as usize;
    if branches != variant.branches {
        return Err(FormatError::Invalid {
            what: "branch count",
            offset: branches_at,
            message: format!("{branches} branches but the variant has {}", variant.branches),
        });
    }
    let active_at = r.pos();
    let active = r.u8("active steps")? as usize;
    if active == 0 || active > variant.steps {
        return Err(FormatError::Invalid {
            what: "active steps",
            offset: active_at,
            message: format!("{active} not in [1, {}]", variant.steps),
        });
    }
    if let Some(limits) = limits {
        if limits.len() != branches {
            return Err(FormatError::Invalid {
                what: "branch count",
                offset: branches_at,
                message: format!("{branches} branches but {} code limits", limits.len()),
            });
        }
    }

    let mut tensor = Vec::with_capacity(branches);
    for b in 0..branches {
        let mut steps = Vec::with_capacity(active);
        for (i, &s) in schedule.sides()[..active].iter().enumerate() {
            let count = s * s;
            let block_at = r.pos();
            let block = r.take(4 * count, "code block")?;
            let codes: Vec<u32> =
                block.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            if let Some(limits) = limits {
                if let Some(k) = codes.iter().position(|&c| c as u64 >= limits[b]) {
                    return Err(FormatError::CodeOutOfRange {
                        branch: b,
                        step: i,
                        offset: block_at + 4 * k,
                        code: codes[k],
                        limit: limits[b],
                    });
                }
            }
            steps.push(CodeGrid::new(s, s, codes)?);
        }
        tensor.push(steps);
    }
    r.finish()?;
    CodeStream::new(variant, side, schedule, CodeTensor::new(tensor)?)
}

/// Payload bits of the first `active` steps: `P × Σ s_i² × bits`, where
/// `bits_per_code[b]` is the code width of branch `b`.
pub fn stream_bits_for(schedule: &ScaleSchedule, active: usize, bits_per_code: &[u32]) -> u64 {
    let tokens = schedule.tokens(active);
    bits_per_code.iter().map(|&b| tokens * b as u64).sum()
}

/// Payload bits of a stream; see [`stream_bits_for`].
pub fn stream_bits(stream: &CodeStream, bits_per_code: &[u32]) -> u64 {
    stream_bits_for(&stream.schedule, stream.active_steps(), bits_per_code)
}

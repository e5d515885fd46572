//! Multi-scale residual quantization.
//!
//! Step `i` downsamples the running residual to `s_i × s_i`, quantizes it,
//! upsamples the result back to full resolution and smooths it with a fixed
//! blend filter before subtracting it from the residual.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{QuantError, Result};
use crate::grid::{CodeGrid, FeatureGrid};
use crate::leaf::Leaf;
use crate::residual::{sum_grids, ResidualConfig, ResidualTrace};
use crate::rng::Rng;

/// Per-step spatial sides, nondecreasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleSchedule {
    sides: Vec<usize>,
}

impl ScaleSchedule {
    /// Ten-step schedule ending at 16×16 (680 tokens per branch).
    pub const VAR_PRESET: [usize; 10] = [1, 2, 3, 4, 5, 6, 8, 10, 13, 16];

    pub fn new(sides: Vec<usize>) -> Result<Self> {
        if sides.is_empty() {
            return Err(QuantError::InvalidSchedule("schedule is empty".into()));
        }
        if sides.contains(&0) {
            return Err(QuantError::InvalidSchedule(format!("zero side in {sides:?}")));
        }
        if let Some(i) = sides.windows(2).position(|w| w[0] > w[1]) {
            return Err(QuantError::InvalidSchedule(format!(
                "sides must be nondecreasing, {} follows {} at step {}",
                sides[i + 1],
                sides[i],
                i + 2
            )));
        }
        Ok(Self { sides })
    }

    pub fn var_preset() -> Self {
        Self { sides: Self::VAR_PRESET.to_vec() }
    }

    /// Every step at full resolution.
    pub fn full(steps: usize, side: usize) -> Result<Self> {
        Self::new(vec![side; steps])
    }

    /// Geometric ramp from 1 to `side`: `s_i = round(side^(i/(steps-1)))`.
    pub fn geometric(steps: usize, side: usize) -> Result<Self> {
        if steps <= 1 {
            return Self::new(vec![side; steps]);
        }
        let sides = (0..steps)
            .map(|i| {
                let t = i as f64 / (steps - 1) as f64;
                (libm::round(libm::pow(side as f64, t)) as usize).clamp(1, side)
            })
            .collect();
        Self::new(sides)
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn steps(&self) -> usize {
        self.sides.len()
    }

    pub fn final_side(&self) -> usize {
        *self.sides.last().expect("non-empty")
    }

    /// Tokens per branch over the first `active` steps.
    pub fn tokens(&self, active: usize) -> u64 {
        self.sides[..active.min(self.sides.len())].iter().map(|&s| (s * s) as u64).sum()
    }

    pub fn check_grid(&self, side: usize) -> Result<()> {
        if self.final_side() != side {
            return Err(QuantError::InvalidSchedule(format!(
                "schedule ends at {} but the grid side is {side}",
                self.final_side()
            )));
        }
        Ok(())
    }
}

/// `branches × Σ s_i²`.
pub fn token_count(schedule: &ScaleSchedule, branches: usize) -> u64 {
    branches as u64 * schedule.tokens(schedule.steps())
}

/// Fixed smoothing applied after upsampling: `γ·conv(z) + (1−γ)·z`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendFilter {
    gamma: f64,
    size: usize,
    kernel: Vec<f64>,
}

impl Default for BlendFilter {
    /// `γ = 0.5` with a 3×3 box kernel.
    fn default() -> Self {
        Self { gamma: 0.5, size: 3, kernel: vec![1.0 / 9.0; 9] }
    }
}

impl BlendFilter {
    /// `kernel` is `size × size`, row-major, with odd `size`.
    pub fn new(gamma: f64, size: usize, kernel: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(QuantError::InvalidConfig(format!("blend gamma {gamma} not in [0, 1]")));
        }
        if size.is_multiple_of(2) {
            return Err(QuantError::InvalidConfig(format!("kernel size {size} must be odd")));
        }
        if kernel.len() != size * size {
            return Err(QuantError::InvalidLength { expected: size * size, found: kernel.len() });
        }
        if let Some(index) = kernel.iter().position(|k| !k.is_finite()) {
            return Err(QuantError::NonFinite { index });
        }
        Ok(Self { gamma, size, kernel })
    }

    pub fn box3(gamma: f64) -> Result<Self> {
        Self::new(gamma, 3, vec![1.0 / 9.0; 9])
    }

    pub fn identity() -> Self {
        Self { gamma: 0.0, size: 1, kernel: vec![1.0] }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }
}

/// Bilinear resampling to `out_h × out_w` with half-pixel centers
/// (`align_corners = false`); source coordinates below zero clamp to zero.
pub fn resample_to(g: &FeatureGrid, out_h: usize, out_w: usize) -> Result<FeatureGrid> {
    if out_h == 0 || out_w == 0 {
        return Err(QuantError::InvalidConfig(format!("cannot resample to {out_h}x{out_w}")));
    }
    if (out_h, out_w) == (g.height(), g.width()) {
        return Ok(g.clone());
    }
    let taps = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (libm::floor(src) as usize).min(input - 1);
                let i1 = if i0 + 1 < input { i0 + 1 } else { i0 };
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let rows = taps(out_h, g.height());
    let cols = taps(out_w, g.width());
    let dim = g.dim();
    let mut data = Vec::with_capacity(out_h * out_w * dim);
    for &(y0, y1, ly) in &rows {
        for &(x0, x1, lx) in &cols {
            let (v00, v01) = (g.vector(y0, x0), g.vector(y0, x1));
            let (v10, v11) = (g.vector(y1, x0), g.vector(y1, x1));
            for c in 0..dim {
                let top = (1.0 - lx) * v00[c] + lx * v01[c];
                let bottom = (1.0 - lx) * v10[c] + lx * v11[c];
                data.push((1.0 - ly) * top + ly * bottom);
            }
        }
    }
    Ok(FeatureGrid::from_parts_unchecked(out_h, out_w, dim, data))
}

/// Bilinear resampling to a `side × side` grid.
pub fn resample(g: &FeatureGrid, side: usize) -> Result<FeatureGrid> {
    resample_to(g, side, side)
}

/// Per-channel zero-padded cross-correlation with the filter kernel.
fn convolve(g: &FeatureGrid, f: &BlendFilter) -> FeatureGrid {
    let (h, w, dim) = g.shape();
    let r = (f.size / 2) as isize;
    let mut data = Vec::with_capacity(g.data().len());
    for y in 0..h as isize {
        for x in 0..w as isize {
            for c in 0..dim {
                let mut acc: Option<f64> = None;
                for ky in -r..=r {
                    let sy = y + ky;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in -r..=r {
                        let sx = x + kx;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let k = f.kernel[((ky + r) as usize) * f.size + (kx + r) as usize];
                        let term = k * g.vector(sy as usize, sx as usize)[c];
                        acc = Some(acc.map_or(term, |a| a + term));
                    }
                }
                data.push(acc.unwrap_or(0.0));
            }
        }
    }
    FeatureGrid::from_parts_unchecked(h, w, dim, data)
}

/// `γ·conv(g) + (1−γ)·g`; exact identity when `γ = 0`.
pub fn blend(g: &FeatureGrid, f: &BlendFilter) -> FeatureGrid {
    if f.gamma == 0.0 {
        return g.clone();
    }
    let mut conv = convolve(g, f);
    if f.gamma != 1.0 {
        let keep = 1.0 - f.gamma;
        for (out, &orig) in conv.vectors_mut().flatten().zip(g.data()) {
            *out = f.gamma * *out + keep * orig;
        }
    }
    conv
}

fn check_square(g: &FeatureGrid) -> Result<usize> {
    g.side().ok_or_else(|| {
        QuantError::InvalidConfig(format!("multi-scale grids must be square, got {}x{}", g.height(), g.width()))
    })
}

/// Full-resolution contribution of one step's codes.
fn expand_step(q: &FeatureGrid, side: usize, filter: &BlendFilter) -> Result<FeatureGrid> {
    Ok(blend(&resample(q, side)?, filter))
}

pub(crate) fn msrq_encode_steps(
    g: &FeatureGrid,
    schedule: &ScaleSchedule,
    leaf: &Leaf<'_>,
    filter: &BlendFilter,
    active: usize,
) -> Result<ResidualTrace> {
    let side = check_square(g)?;
    schedule.check_grid(side)?;
    leaf.check_dim(g.dim())?;
    let mut trace = ResidualTrace::start(g, active);
    for &s in &schedule.sides()[..active] {
        let down = resample(&trace.residual, s)?;
        let (q, codes, _) = leaf.quantize_grid(&down)?;
        let step = expand_step(&q, side, filter)?;
        trace.record(step, codes);
    }
    Ok(trace)
}

/// Multi-scale residual encode. `cfg.steps` must equal the schedule length.
///
/// The trace holds codes at each step's native side and full-resolution
/// step contributions.
pub fn msrq_encode(
    g: &FeatureGrid,
    schedule: &ScaleSchedule,
    cfg: &ResidualConfig<'_>,
    filter: &BlendFilter,
    training: bool,
    rng: &mut Rng,
) -> Result<ResidualTrace> {
    cfg.validate()?;
    if schedule.steps() != cfg.steps {
        return Err(QuantError::InvalidSchedule(format!(
            "{} scales for {} residual steps",
            schedule.steps(),
            cfg.steps
        )));
    }
    check_square(g)?;
    schedule.check_grid(g.height())?;
    cfg.leaf.check_dim(g.dim())?;
    let active = cfg.dropout.active_steps(cfg.steps, training, rng);
    msrq_encode_steps(g, schedule, &cfg.leaf, filter, active)
}

/// Reconstructs the full-resolution grid from the first `codes.len()` steps.
pub fn msrq_decode(
    codes: &[CodeGrid],
    schedule: &ScaleSchedule,
    leaf: &Leaf<'_>,
    filter: &BlendFilter,
    dim: usize,
) -> Result<FeatureGrid> {
    if codes.is_empty() || codes.len() > schedule.steps() {
        return Err(QuantError::InvalidConfig(format!(
            "{} code steps for a {}-step schedule",
            codes.len(),
            schedule.steps()
        )));
    }
    let side = schedule.final_side();
    let mut steps = Vec::with_capacity(codes.len());
    for (c, &s) in codes.iter().zip(schedule.sides()) {
        if (c.height(), c.width()) != (s, s) {
            return Err(QuantError::ShapeMismatch { expected: (s, s, dim), found: (c.height(), c.width(), dim) });
        }
        steps.push(expand_step(&leaf.decode_grid(c, dim)?, side, filter)?);
    }
    Ok(sum_grids(steps.iter()).expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Codebook;
    use crate::residual::{rq_encode, rq_sum};

    fn random_grid(rng: &mut Rng, side: usize, d: usize) -> FeatureGrid {
        FeatureGrid::from_fn(side, side, d, |_, _, _| rng.next_gaussian()).unwrap()
    }

    #[test]
    fn schedule_validation() {
        assert!(ScaleSchedule::new(vec![]).is_err());
        assert!(ScaleSchedule::new(vec![1, 0, 2]).is_err());
        assert!(ScaleSchedule::new(vec![1, 4, 2]).is_err());
        assert!(ScaleSchedule::new(vec![2, 2, 4]).is_ok());
        assert!(ScaleSchedule::new(vec![1, 2]).unwrap().check_grid(4).is_err());
    }

    #[test]
    fn geometric_schedules() {
        assert_eq!(ScaleSchedule::geometric(1, 8).unwrap().sides(), &[8]);
        assert_eq!(ScaleSchedule::geometric(4, 8).unwrap().sides(), &[1, 2, 4, 8]);
        assert_eq!(ScaleSchedule::geometric(3, 16).unwrap().sides(), &[1, 4, 16]);
        assert_eq!(ScaleSchedule::geometric(2, 1).unwrap().sides(), &[1, 1]);
    }

    #[test]
    fn token_counts() {
        assert_eq!(token_count(&ScaleSchedule::var_preset(), 1), 680);
        assert_eq!(token_count(&ScaleSchedule::new(vec![1]).unwrap(), 1), 1);
        let s = ScaleSchedule::new(vec![1, 3, 5]).unwrap();
        assert_eq!(token_count(&s, 2), 2 * token_count(&s, 1));
        assert_eq!(s.tokens(2), 10);
    }

    #[test]
    fn same_side_resample_is_identity() {
        let mut rng = Rng::new(1);
        let g = random_grid(&mut rng, 5, 3);
        assert_eq!(resample(&g, 5).unwrap(), g);
    }

    #[test]
    fn constant_stays_constant() {
        let g = FeatureGrid::from_fn(3, 3, 2, |_, _, c| if c == 0 { 0.25 } else { -2.0 }).unwrap();
        for side in [1, 2, 5, 7, 12] {
            let r = resample(&g, side).unwrap();
            for v in r.vectors() {
                assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] + 2.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn upsample_ramp_matches_closed_form() {
        // 2x2 -> 4x4: src = (o + 0.5)/2 - 0.5 = -0.25, 0.25, 0.75, 1.25; clamp to [0, 1]
        let g = FeatureGrid::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let r = resample(&g, 4).unwrap();
        let coord = [0.0, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for x in 0..4 {
                let expected = 2.0 * coord[y] + coord[x];
                assert!((r.vector(y, x)[0] - expected).abs() < 1e-15, "({y},{x})");
            }
        }
    }

    #[test]
    fn downsample_to_one_averages_center() {
        // 4 -> 1: src = 0.5*4 - 0.5 = 1.5, taps rows/cols 1 and 2 equally
        let g = FeatureGrid::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f64).unwrap();
        let r = resample(&g, 1).unwrap();
        assert!((r.data()[0] - 7.5).abs() < 1e-15);
    }

    #[test]
    fn blend_degenerate_cases() {
        let mut rng = Rng::new(2);
        let g = random_grid(&mut rng, 4, 2);
        assert_eq!(blend(&g, &BlendFilter::box3(0.0).unwrap()), g);
        let id = BlendFilter::new(1.0, 1, vec![1.0]).unwrap();
        assert_eq!(blend(&g, &id), g);
    }

    #[test]
    fn blend_delta_matches_hand_convolution() {
        let g = FeatureGrid::from_fn(3, 3, 1, |y, x, _| if (y, x) == (1, 1) { 9.0 } else { 0.0 }).unwrap();
        let out = blend(&g, &BlendFilter::box3(0.5).unwrap());
        // conv spreads 9/9 = 1 to every cell; center keeps half of 9.
        for y in 0..3 {
            for x in 0..3 {
                let expected = if (y, x) == (1, 1) { 0.5 * 1.0 + 0.5 * 9.0 } else { 0.5 };
                assert!((out.vector(y, x)[0] - expected).abs() < 1e-15);
            }
        }
        // zero padding at the corner: a corner delta reaches a 2x2 neighbourhood only
        let corner = FeatureGrid::from_fn(3, 3, 1, |y, x, _| if (y, x) == (0, 0) { 9.0 } else { 0.0 }).unwrap();
        let out = blend(&corner, &BlendFilter::box3(1.0).unwrap());
        assert!((out.vector(1, 1)[0] - 1.0).abs() < 1e-15);
        assert_eq!(out.vector(2, 2)[0], 0.0);
    }

    #[test]
    fn blend_filter_validation() {
        assert!(BlendFilter::new(1.5, 3, vec![0.0; 9]).is_err());
        assert!(BlendFilter::new(0.5, 2, vec![0.0; 4]).is_err());
        assert!(BlendFilter::new(0.5, 3, vec![0.0; 8]).is_err());
        assert_eq!(BlendFilter::default(), BlendFilter::box3(0.5).unwrap());
    }

    #[test]
    fn full_resolution_schedule_equals_plain_rq() {
        let mut rng = Rng::new(3);
        let cb = Codebook::new(8, 2, (0..16).map(|_| rng.next_gaussian()).collect()).unwrap();
        let g = random_grid(&mut rng, 4, 2);
        let cfg = ResidualConfig::new(3, Leaf::Vq(&cb)).unwrap();
        let schedule = ScaleSchedule::full(3, 4).unwrap();
        let filter = BlendFilter::box3(0.0).unwrap();
        for training in [false, true] {
            let a = msrq_encode(&g, &schedule, &cfg, &filter, training, &mut Rng::new(77)).unwrap();
            let b = rq_encode(&g, &cfg, training, &mut Rng::new(77)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_non_square_and_mismatched() {
        let cb = Codebook::from_rows(&[[0.0]]).unwrap();
        let cfg = ResidualConfig::new(2, Leaf::Vq(&cb)).unwrap();
        let filter = BlendFilter::default();
        let s = ScaleSchedule::new(vec![1, 2]).unwrap();
        let rect = FeatureGrid::zeros(2, 3, 1);
        assert!(msrq_encode(&rect, &s, &cfg, &filter, false, &mut Rng::new(0)).is_err());
        let wrong_len = ScaleSchedule::new(vec![2]).unwrap();
        let sq = FeatureGrid::zeros(2, 2, 1);
        assert!(msrq_encode(&sq, &wrong_len, &cfg, &filter, false, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn residual_identity_and_decode() {
        let mut rng = Rng::new(4);
        let cb = Codebook::new(16, 3, (0..48).map(|_| rng.next_gaussian()).collect()).unwrap();
        let g = random_grid(&mut rng, 8, 3);
        let schedule = ScaleSchedule::new(vec![1, 2, 4, 8]).unwrap();
        let cfg = ResidualConfig::new(4, Leaf::Vq(&cb)).unwrap();
        let filter = BlendFilter::default();
        let trace = msrq_encode(&g, &schedule, &cfg, &filter, false, &mut rng).unwrap();
        let sum = rq_sum(&trace);
        for ((a, s), r) in g.data().iter().zip(sum.data()).zip(trace.residual.data()) {
            assert!((a - s - r).abs() <= 1e-9);
        }
        let sides: Vec<usize> = trace.codes.iter().map(CodeGrid::height).collect();
        assert_eq!(sides, vec![1, 2, 4, 8]);
        assert_eq!(msrq_decode(&trace.codes, &schedule, &cfg.leaf, &filter, 3).unwrap(), sum);
    }
}

//! Raw-pixel patch extraction for RGB images.

use image::RgbImage;
use xq_core::{FeatureGrid, QuantError};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self { patch: 8 }
    }
}

impl PatchConfig {
    pub fn new(patch: usize) -> Result<Self, QuantError> {
        if patch == 0 {
            return Err(QuantError::InvalidConfig("patch side must be positive".into()));
        }
        Ok(Self { patch })
    }

    /// Channels per patch vector.
    pub fn dim(&self) -> usize {
        CHANNELS * self.patch * self.patch
    }

    fn check_image(&self, width: usize, height: usize) -> Result<(), QuantError> {
        if width == 0 || height == 0 || !width.is_multiple_of(self.patch) || !height.is_multiple_of(self.patch) {
            return Err(QuantError::InvalidConfig(format!(
                "image {width}x{height} is not divisible into {p}x{p} patches",
                p = self.patch
            )));
        }
        Ok(())
    }
}

pub fn pixel_to_value(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

/// Inverse of [`pixel_to_value`], clamped to [0, 255] and rounded half up.
pub fn value_to_pixel(v: f64) -> u8 {
    ((v + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Splits `img` into a grid of patch vectors, each flattened row-major with
/// the channel varying fastest.
pub fn image_to_grid(img: &RgbImage, cfg: &PatchConfig) -> Result<FeatureGrid, QuantError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    cfg.check_image(w, h)?;
    let p = cfg.patch;
    let (rows, cols) = (h / p, w / p);
    let mut data = Vec::with_capacity(rows * cols * cfg.dim());
    for r in 0..rows {
        for c in 0..cols {
            for y in 0..p {
                for x in 0..p {
                    let px = img.get_pixel((c * p + x) as u32, (r * p + y) as u32);
                    data.extend(px.0.iter().map(|&v| pixel_to_value(v)));
                }
            }
        }
    }
    FeatureGrid::new(rows, cols, cfg.dim(), data)
}

pub fn grid_to_image(g: &FeatureGrid, cfg: &PatchConfig) -> Result<RgbImage, QuantError> {
    if g.dim() != cfg.dim() {
        return Err(QuantError::DimensionMismatch { expected: cfg.dim(), found: g.dim() });
    }
    let p = cfg.patch;
    let mut img = RgbImage::new((g.width() * p) as u32, (g.height() * p) as u32);
    for r in 0..g.height() {
        for c in 0..g.width() {
            let v = g.vector(r, c);
            for y in 0..p {
                for x in 0..p {
                    let k = CHANNELS * (y * p + x);
                    let px = img.get_pixel_mut((c * p + x) as u32, (r * p + y) as u32);
                    for ch in 0..CHANNELS {
                        px.0[ch] = value_to_pixel(v[k + ch]);
                    }
                }
            }
        }
    }
    Ok(img)
}

/// Peak signal-to-noise ratio in dB over all 8-bit samples; infinite for
/// identical images.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64, QuantError> {
    if a.dimensions() != b.dimensions() {
        return Err(QuantError::InvalidConfig(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    let n = a.as_raw().len();
    let se: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    if se == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / (se / n as f64)).log10())
}

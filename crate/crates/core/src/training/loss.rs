use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::LN_2;

use crate::error::{QuantError, Result};
use crate::grid::{mse, FeatureGrid};

/// Commitment weight used when reporting the VQ loss.
pub const DEFAULT_BETA: f64 = 0.25;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// `(1 + beta) · mse(z, zq)`: codebook and commitment terms, which share a
/// value when no gradients flow.
pub fn vq_loss(z: &FeatureGrid, zq: &FeatureGrid, beta: f64) -> Result<f64> {
    Ok((1.0 + beta) * mse(z, zq)?)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Binary entropy (nats) of `sigmoid(logit)`, stable for large logits.
fn logit_entropy(logit: f64) -> f64 {
    if !logit.is_finite() {
        return 0.0;
    }
    let q = sigmoid(logit);
    q * softplus(-logit) + (1.0 - q) * softplus(logit)
}

fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * libm::log(x) } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Entropy auxiliary term for binary quantizers.
///
/// Each channel of each position gets a soft probability
/// `q = sigmoid(2z/τ)` of quantizing to `+1`. Per channel, the term is the
/// mean per-position binary entropy minus the binary entropy of the mean
/// probability; the result averages channels and lies in `[−ln 2, 0]`.
/// Lower values mean confident individual codes with balanced overall usage.
pub fn entropy_aux(pre_quant: &FeatureGrid, temperature: f64) -> Result<f64> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(QuantError::InvalidConfig(format!("temperature {temperature} must be positive")));
    }
    let dim = pre_quant.dim();
    let n = pre_quant.positions() as f64;
    let mut sample_entropy = alloc::vec![0.0; dim];
    let mut mean_prob = alloc::vec![0.0; dim];
    for z in pre_quant.vectors() {
        for (c, &v) in z.iter().enumerate() {
            let logit = 2.0 * v / temperature;
            sample_entropy[c] += logit_entropy(logit);
            mean_prob[c] += sigmoid(logit);
        }
    }
    let total: f64 =
        sample_entropy.iter().zip(&mean_prob).map(|(h, p)| (h / n - binary_entropy(p / n)).clamp(-LN_2, 0.0)).sum();
    Ok(total / dim as f64)
}

/// Weights of the computable loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub vq: f64,
    pub aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { recon: 1.0, vq: 1.0, aux: 0.0 }
    }
}

/// Weight names accepted for compatibility but without a loss term here.
const UNSUPPORTED_TERMS: [&str; 3] = ["perceptual", "adversarial", "clip"];

impl LossWeights {
    pub fn new(recon: f64, vq: f64, aux: f64) -> Result<Self> {
        for (name, w) in [("recon", recon), ("vq", vq), ("aux", aux)] {
            if !w.is_finite() || w < 0.0 {
                return Err(QuantError::InvalidConfig(format!("weight {name}={w} must be finite and >= 0")));
            }
        }
        Ok(Self { recon, vq, aux })
    }

    /// Parses `name=value` pairs separated by commas, starting from the
    /// defaults. Returns the weights and the names of accepted weights whose
    /// terms are not computed (`perceptual`, `adversarial`, `clip`).
    pub fn parse(text: &str) -> Result<(Self, Vec<String>)> {
        let mut w = Self::default();
        let mut ignored = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, value) = item
                .split_once('=')
                .ok_or_else(|| QuantError::InvalidConfig(format!("expected name=value, found '{item}'")))?;
            let value: f64 =
                value.trim().parse().map_err(|_| QuantError::InvalidConfig(format!("bad weight value in '{item}'")))?;
            match name.trim() {
                "recon" => w.recon = value,
                "vq" => w.vq = value,
                "aux" => w.aux = value,
                other if UNSUPPORTED_TERMS.contains(&other) => ignored.push(other.to_string()),
                other => return Err(QuantError::InvalidConfig(format!("unknown loss weight '{other}'"))),
            }
        }
        Ok((Self::new(w.recon, w.vq, w.aux)?, ignored))
    }
}

/// Weighted sum of the reconstruction, VQ and auxiliary terms.
pub fn composite_loss(recon: f64, vq: f64, aux: f64, w: &LossWeights) -> f64 {
    w.recon * recon + w.vq * vq + w.aux * aux
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::vec;

    #[test]
    fn vq_loss_examples() {
        let mut rng = Rng::new(1);
        let a = FeatureGrid::from_fn(3, 3, 2, |_, _, _| rng.next_gaussian()).unwrap();
        let b = FeatureGrid::from_fn(3, 3, 2, |_, _, _| rng.next_gaussian()).unwrap();
        assert_eq!(vq_loss(&a, &a, 0.7).unwrap(), 0.0);
        assert_eq!(vq_loss(&a, &b, 0.0).unwrap(), mse(&a, &b).unwrap());
        assert!((vq_loss(&a, &b, 0.25).unwrap() - 1.25 * mse(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn entropy_symmetric_point_is_zero() {
        let g = FeatureGrid::zeros(4, 4, 3);
        assert!(entropy_aux(&g, 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn entropy_split_batch() {
        // |z|/τ = 10: per-sample entropy of sigmoid(20), mean probability 1/2
        let g = FeatureGrid::from_fn(1, 4, 1, |_, x, _| if x < 2 { 10.0 } else { -10.0 }).unwrap();
        let q = 1.0 / (1.0 + libm::exp(-20.0));
        let h = -q * libm::log(q) - (1.0 - q) * libm::log(1.0 - q);
        let expected = h - LN_2;
        let got = entropy_aux(&g, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got + LN_2).abs() < 1e-6);
    }

    #[test]
    fn entropy_permutation_invariant_and_bounded() {
        let mut rng = Rng::new(2);
        let vals: Vec<f64> = (0..24).map(|_| 3.0 * rng.next_gaussian()).collect();
        let g = FeatureGrid::new(2, 4, 3, vals.clone()).unwrap();
        let mut rows: Vec<&[f64]> = vals.chunks(3).collect();
        rows.reverse();
        let flipped = FeatureGrid::new(2, 4, 3, rows.concat()).unwrap();
        let a = entropy_aux(&g, 0.5).unwrap();
        let b = entropy_aux(&flipped, 0.5).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((-LN_2..=0.0).contains(&a));
        let extreme = FeatureGrid::new(1, 2, 1, vec![1e300, -1e300]).unwrap();
        assert!(entropy_aux(&extreme, 1e-300).unwrap().is_finite());
        assert!(entropy_aux(&g, 0.0).is_err());
    }

    #[test]
    fn composite_examples() {
        let zero = LossWeights::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(composite_loss(3.0, 2.0, -0.5, &zero), 0.0);
        let defaults = LossWeights::default();
        assert_eq!(composite_loss(0.5, 0.25, -0.3, &defaults), 0.75);
        let doubled = LossWeights::new(2.0, 1.0, 1.0).unwrap();
        let none = LossWeights::new(0.0, 1.0, 1.0).unwrap();
        let delta = composite_loss(0.5, 0.25, -0.1, &doubled) - composite_loss(0.5, 0.25, -0.1, &none);
        assert!((delta - 2.0 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn parse_weights() {
        let (w, ignored) =
            LossWeights::parse("recon=1, vq=1, perceptual=1, adversarial=0.5, clip=0.1, aux=0.2").unwrap();
        assert_eq!(w, LossWeights { recon: 1.0, vq: 1.0, aux: 0.2 });
        assert_eq!(ignored, vec!["perceptual", "adversarial", "clip"]);
        assert!(LossWeights::parse("lpips=1").is_err());
        assert!(LossWeights::parse("recon=-1").is_err());
        assert!(LossWeights::parse("recon").is_err());
        assert_eq!(LossWeights::parse("").unwrap().0, LossWeights::default());
    }
}

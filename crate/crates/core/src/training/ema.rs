use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{QuantError, Result};
use crate::grid::Codebook;

const LAPLACE_EPS: f64 = 1e-5;

/// Exponential-moving-average codebook maintenance.
///
/// Every update decays the running per-code counts and sums by `decay` and
/// adds the batch statistics. Codes that received samples are then set to
/// `sum / count`, with counts Laplace-smoothed over the whole codebook;
/// codes without samples keep their codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaCodebook {
    codebook: Codebook,
    decay: f64,
    counts: Vec<f64>,
    sums: Vec<f64>,
}

impl EmaCodebook {
    /// `decay` must lie in `(0, 1]`.
    pub fn new(codebook: Codebook, decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(QuantError::InvalidConfig(format!("EMA decay {decay} not in (0, 1]")));
        }
        let (size, dim) = (codebook.size(), codebook.dim());
        Ok(Self { codebook, decay, counts: vec![0.0; size], sums: vec![0.0; size * dim] })
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn into_codebook(self) -> Codebook {
        self.codebook
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    /// `samples` is row-major with the codebook's dimension; `assignments`
    /// holds one code per sample.
    pub fn update(&mut self, samples: &[f64], assignments: &[u32]) -> Result<()> {
        let (size, dim) = (self.codebook.size(), self.codebook.dim());
        if samples.len() != assignments.len() * dim {
            return Err(QuantError::InvalidLength { expected: assignments.len() * dim, found: samples.len() });
        }
        if let Some(&code) = assignments.iter().find(|&&a| a as usize >= size) {
            return Err(QuantError::CodeOutOfRange { code, limit: size as u64 });
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(QuantError::NonFinite { index });
        }

        let mut batch_counts = vec![0.0; size];
        let mut batch_sums = vec![0.0; size * dim];
        for (x, &a) in samples.chunks_exact(dim).zip(assignments) {
            let a = a as usize;
            batch_counts[a] += 1.0;
            for (s, v) in batch_sums[a * dim..(a + 1) * dim].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (c, b) in self.counts.iter_mut().zip(&batch_counts) {
            *c = self.decay * *c + b;
        }
        for (s, b) in self.sums.iter_mut().zip(&batch_sums) {
            *s = self.decay * *s + b;
        }

        let total: f64 = self.counts.iter().sum();
        for j in (0..size).filter(|&j| batch_counts[j] > 0.0) {
            let smoothed = (self.counts[j] + LAPLACE_EPS) / (total + size as f64 * LAPLACE_EPS) * total;
            let sums = &self.sums[j * dim..(j + 1) * dim];
            for (c, s) in self.codebook.codeword_mut(j).iter_mut().zip(sums) {
                *c = s / smoothed;
            }
        }
        Ok(())
    }
}

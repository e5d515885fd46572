use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{QuantError, Result};
use crate::grid::CodeGrid;

/// Per-code hit counters. Recording takes `&self` so several threads may
/// record into one tracker; read the totals once recording has finished.
#[derive(Debug)]
pub struct UtilizationTracker {
    hits: Vec<AtomicU64>,
}

impl UtilizationTracker {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(QuantError::InvalidConfig("codebook size must be positive".into()));
        }
        Ok(Self { hits: (0..size).map(|_| AtomicU64::new(0)).collect() })
    }

    pub fn size(&self) -> usize {
        self.hits.len()
    }

    pub fn record(&self, code: u32) -> Result<()> {
        let counter =
            self.hits.get(code as usize).ok_or(QuantError::CodeOutOfRange { code, limit: self.hits.len() as u64 })?;
        counter.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn record_grid(&self, codes: &CodeGrid) -> Result<()> {
        codes.codes().iter().try_for_each(|&c| self.record(c))
    }

    pub fn hits(&self, code: usize) -> u64 {
        self.hits[code].load(Ordering::Relaxed)
    }

    pub fn histogram(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.load(Ordering::Relaxed)).collect()
    }

    /// Number of codes hit at least once.
    pub fn used(&self) -> usize {
        self.hits.iter().filter(|h| h.load(Ordering::Relaxed) > 0).count()
    }

    pub fn utilization(&self) -> f64 {
        self.used() as f64 / self.hits.len() as f64
    }
}

/// Fraction of codes hit at least once.
pub fn utilization(tracker: &UtilizationTracker) -> f64 {
    tracker.utilization()
}

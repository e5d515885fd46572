//! Offline codebook learning, scalar loss terms and codebook usage metrics.

mod ema;
mod fit;
mod kmeans;
mod loss;
#[cfg(target_has_atomic = "64")]
mod utilization;

pub use ema::EmaCodebook;
pub use fit::{fit_codebooks, FitOptions, FitReport};
pub use kmeans::{kmeans_fit, KMeansFit};
pub use loss::{composite_loss, entropy_aux, vq_loss, LossWeights, DEFAULT_BETA, DEFAULT_TEMPERATURE};
#[cfg(target_has_atomic = "64")]
pub use utilization::{utilization, UtilizationTracker};

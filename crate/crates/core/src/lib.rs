//! Hierarchical vector quantization.
//!
//! The crate implements a family of quantizers that compose into a single
//! hierarchy: `P` product branches, each running `N` residual steps over a
//! leaf quantizer (nearest-codeword VQ, lookup-free LFQ or binary spherical
//! BSQ), optionally at multiple spatial scales. Variants are named with the
//! ASCII grammar `XQ[-MS]-{V|L|B}[-R<N>][-P<P>]`, see [`hierarchy::Variant`].
//!
//! Everything here is pure computation over in-memory values and builds
//! without `std`; file formats and the command-line front end live in the
//! companion `xq` crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod grid;
pub mod hierarchy;
pub mod leaf;
pub mod multiscale;
pub mod product;
pub mod residual;
pub mod rng;
pub mod training;

pub use error::{QuantError, Result};
pub use grid::{grid_subtract, mse, CodeGrid, Codebook, FeatureGrid};
pub use hierarchy::{hier_decode, hier_encode, CodeTensor, HierarchySpec, QuantOutcome, Variant};
pub use leaf::{bsq_quantize, leaf_quantize_grid, lfq_quantize, vq_quantize, Leaf, LeafKind, QuantizedVector};
pub use multiscale::{blend, msrq_encode, resample, token_count, BlendFilter, ScaleSchedule};
pub use product::{pq_join, pq_quantize, pq_split, ProductConfig};
pub use residual::{rq_decode, rq_encode, rq_sum, Dropout, ResidualConfig, ResidualTrace};
pub use rng::Rng;

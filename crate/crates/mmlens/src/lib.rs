//! Exact Min/Max factorizations of small ReLU classifiers.
//!
//! The crate trains a 1-D convolutional ReLU network on heartbeat templates,
//! then rewrites the fully connected tail of the trained network as a finite
//! `Min`/`Max` composition of affine factors that reproduces the network
//! output exactly on every input whose activation patterns were discovered.
//! The factor a sample selects induces a hierarchical partition of the
//! dataset, which renders as rows of alpha-blended waveform composites.
//!
//! Modules:
//! - [`nn`]: network types, forward/trace/embedding, training, gradient check,
//!   and the `mmlens-model/1` text format.
//! - [`minmax`]: activation patterns, sign splitting, layer expansion,
//!   expression evaluation and verification, and the `mmlens-expr/1` format.
//! - [`partition`]: concept trees grouping samples by selected factor.
//! - [`ecg`]: recording ingestion, R-peak detection, template extraction,
//!   and a synthetic beat generator.
//! - [`viz`]: deterministic SVG composites and hierarchy figures.

pub mod ecg;
pub mod error;
pub mod linalg;
pub mod minmax;
pub mod nn;
pub mod partition;
pub mod viz;

pub use error::{Error, Result};

/// Derives a per-domain RNG seed from a run seed so that independent
/// pipeline stages draw from decoupled streams.
///
/// FNV-1a over the domain tag, folded into the base seed; stable across
/// platforms and releases of this crate.
pub fn derive_seed(base: u64, domain: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in domain.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    base ^ h
}

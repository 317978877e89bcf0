//! driftlab: a self-contained lab for studying concept drift in small
//! conditional denoising diffusion models.
//!
//! The library covers the full loop: a procedural image world with held-out
//! concepts, a reverse-mode tape for training pixel-space denoisers, few-shot
//! customization with prior and distillation regularizers, a zero-shot
//! diffusion classifier, distributional drift metrics (chromaticity EMD, KID,
//! FID, embedding similarity), and a resumable experiment harness with
//! deterministic reports.
//!
//! Everything is seeded and counter-based: the same config and seed produce
//! byte-identical artifacts, including across resumed runs.

pub mod checkpoint;
pub mod config;
pub mod customize;
pub mod diffusion;
pub mod error;
pub mod gradcore;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod world;
pub mod zeroshot;

pub use error::{Error, Result};

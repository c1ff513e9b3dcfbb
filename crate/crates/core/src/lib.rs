//! Frequency-decomposed waveform mixing and augmentation-ensemble training
//! for multi-channel time series.
//!
//! The crate provides:
//!
//! - complementary low/high-pass FIR decomposition of sensor windows
//!   ([`signal`]),
//! - synthetic-style augmentation primitives (octave mix, mixup, 1-D RICAP)
//!   and geometric rotation, composed into seeded policies ([`augment`]),
//! - a small 1-D CNN with exact reverse-mode gradients, Adam, and weight
//!   freezing ([`network`]),
//! - the augmentation-ensemble model and its two-phase training algorithm
//!   ([`trainer`]),
//! - recording ingestion, windowing, subject-based splitting, and a synthetic
//!   corpus generator ([`dataset`]),
//! - classification metrics and multi-trial aggregation ([`metrics`]),
//! - a small binary tensor container for dumping kernels, batches, and model
//!   parameters ([`container`]).
//!
//! Everything stochastic takes an explicit seeded generator; identical seeds
//! give bit-identical results.

pub mod augment;
pub mod container;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod signal;
pub mod trainer;

pub use error::{Error, Result};

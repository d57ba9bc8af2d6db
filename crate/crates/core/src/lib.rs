//! Cross-domain distillation laboratory.
//!
//! A frozen multi-level teacher encoder and a trainable bottleneck/decoder
//! student form a reverse-distillation stack. On top of it, [`cdd`] trains a
//! global student from training data that may contain unlabeled anomalies by
//! splitting the data into low-anomaly domains, training one student per
//! domain, and distilling their cross-domain pseudo-normal features.
//!
//! Module map:
//! - [`datagen`]: synthetic texture corpora, noisy train/test splits, MVTec-style ingestion.
//! - [`models`]: teacher encoder, student network, parameters, checkpoints, optimizer.
//! - [`distill`]: cosine losses, baseline trainer, anomaly maps and scoring.
//! - [`cdd`]: schedules, domain construction, affinity selection, the full training loop.
//! - [`metrics`]: image/pixel ROC-AUC and per-region overlap.
//! - [`harness`]: run configuration, run directories, sweeps and plots.

pub mod cdd;
pub mod datagen;
pub mod distill;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod seeds;

pub use error::{Error, Result};

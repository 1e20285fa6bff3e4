//! fopkit core: a joint face-voice embedding toolkit over precomputed
//! per-modality feature vectors.
//!
//! The pipeline projects face and voice embeddings into a shared space,
//! fuses them through a learned attention gate, and trains the fused
//! embedding with a joint cross-entropy + orthogonality objective (or one
//! of the comparison objectives: plain cross-entropy, center, git,
//! contrastive, triplet). Evaluation covers cross-modal verification
//! (ROC/AUC/EER), 1:n gallery matching, demographic stratification, and the
//! heard/unheard cross-language protocol.
//!
//! Module map:
//! - [`matrix`], [`ops`]: dense f64 kernel with analytic forward/backward ops
//! - [`model`]: projections, gated/linear fusion, classifier, checkpoints
//! - [`loss`]: all supervision objectives with instrumented work counters
//! - [`train`]: Adam loop with exponential learning-rate decay
//! - [`eval`]: verification/matching metrics and protocols
//! - [`data`]: embedding stores, splits, synthetic benchmark generator

#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod ops;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use matrix::{Matrix, Parameter};

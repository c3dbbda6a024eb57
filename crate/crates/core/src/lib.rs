//! Training engine and evaluation harness for adaptive-threshold
//! semi-supervised domain generalization on feature-space data.
//!
//! The crate provides the full pipeline: synthetic multi-domain data
//! ([`synth`]), label-budget splitting and leave-one-domain-out folds
//! ([`data`]), feature-space augmentation ([`augment`]), a small MLP with
//! exact hand-written gradients ([`model`]), per-domain adaptive confidence
//! thresholds ([`threshold`]), kNN-based pseudo-label refinement
//! ([`refine`]), contrastive objectives ([`contrastive`]), and the training
//! loop plus sweep harness ([`trainer`]). [`gradcheck`] verifies every loss
//! against central finite differences.

pub mod augment;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod refine;
pub mod rng;
pub mod synth;
pub mod threshold;
pub mod trainer;

pub use error::{CatError, Result};

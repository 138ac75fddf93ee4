//! Black-box membership scoring for RL-trained language models.
//!
//! The core signal is geometric: for a prompt the model was trained on,
//! repeated sampling collapses onto a few near-identical completions, so the
//! average distance to each completion's nearest neighbors is small. For an
//! unseen prompt the samples stay spread out. This crate implements that
//! detector (min-k nearest-neighbor distance over pairwise normalized edit
//! distances) together with reference baselines, diversity and rigidity
//! analyses of the completion sets, evaluation utilities, and a sampling
//! client for OpenAI-compatible endpoints.
//!
//! Modules:
//! - [`distance`]: edit-distance kernel, unit segmentation, pairwise matrices
//! - [`detector`]: membership scores (min-knn, cdd, ppl, min-k%)
//! - [`sampler`]: HTTP sampling client with an on-disk completion cache
//! - [`providers`]: embedding / NLI / labeling provider clients
//! - [`diversity`]: expected-adjusted distinctness, embedding and NLI diversity
//! - [`rigidity`]: rigid n-gram extraction, categorization, structure clustering
//! - [`eval`]: ROC-AUC, dual-stage subset construction, report assembly
//! - [`corpus`]: JSONL record types and atomic file IO
//! - [`synthetic`]: self-contained synthetic benchmark generator

pub mod corpus;
pub mod detector;
pub mod distance;
pub mod diversity;
pub mod eval;
pub(crate) mod net;
pub mod providers;
pub mod rigidity;
pub mod sampler;
pub mod synthetic;
pub mod text;

/// Version string stamped into run manifests and score records.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! rlvr-forge: a desk-scale medical reasoning training pipeline.
//!
//! The crate covers the whole data and optimization path:
//!
//! * [`kgstore`] loads a typed medical knowledge graph from JSON-Lines.
//! * [`synth`] samples subgraphs and relation paths, masks one entity and
//!   renders a multiple-choice question with graph-derived distractors.
//! * [`corpus`] filters, verifies, anonymizes, stratifies and mixes QA data.
//! * [`distill`] builds a chain-of-thought cold-start set from a teacher.
//! * [`reward`] scores completions by answer-tag format and correctness.
//! * [`grpo`] implements group-relative policy optimization over a
//!   two-factor linear softmax policy with exact analytic gradients.
//! * [`curriculum`] drives the two-stage schedule with sparsity-triggered
//!   transition and hard-sample mining.
//! * [`evalharness`] runs adapters over benchmark files and reports
//!   accuracies, macro averages and ablation deltas.

pub mod config;
pub mod corpus;
pub mod curriculum;
pub mod distill;
pub mod endpoint;
pub mod error;
pub mod evalharness;
pub mod grpo;
pub mod jsonl;
pub mod kgstore;
pub mod reward;
pub mod rng;
pub mod synth;
pub mod toy;

pub use error::{Error, Result};

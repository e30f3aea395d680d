//! Sequence labeling with dynamic feature selection.
//!
//! A linear feature-templated classifier whose inference accumulates
//! per-template score contributions in a learned template order and stops
//! as soon as one label leads all others by a margin. Training optimizes
//! every prefix of the template sequence to be its own accurate classifier,
//! so confident predictions need only the first few templates.
//!
//! Module map:
//! - [`corpus`] — tab-separated corpus I/O, label sets, vocabularies
//! - [`features`] — template specs, feature extraction, per-template indexing
//! - [`model`] — weight blocks, prefix scores, the margin hinge, serialization
//! - [`inference`] — early-exit token prediction and greedy sentence tagging
//! - [`learning`] — prefix-sum hinge objective, AdaGrad/RDA optimizer, trainers
//! - [`ordering`] — greedy stagewise template-order search
//! - [`evalbench`] — accuracy/speed reports, throughput benchmarks, sweeps
//! - [`synth`] — deterministic synthetic corpora used by the bundled data set

pub mod corpus;
pub mod error;
pub mod evalbench;
pub mod features;
pub mod inference;
pub mod learning;
pub mod model;
pub mod ordering;
pub mod synth;

pub use error::{Error, Result};

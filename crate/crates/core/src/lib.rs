//! Dataset curation, late-fusion multimodal classification, and
//! relative-abundance trend analysis for social media posts.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! - [`corpus`]: post ingestion (JSONL), text sanitization, multimodal filter
//! - [`dedup`]: perceptual (dHash) and exact-field duplicate removal
//! - [`simaudit`]: LSH signatures over 768-d embeddings, label audit flags
//! - [`prep`]: class balancing by undersampling, stratified 60/20/20 split
//! - [`fusion`]: pluggable per-modality encoders and a trainable fusion head
//! - [`eval`]: confusion matrix, macro metrics, one-vs-rest ROC/PR curves
//! - [`trend`]: monthly relative abundance, cubic and linear regressions
//! - [`pipeline`]: config, reproducibility manifests, CLI runners

// Indexed loops are the clearest way to write the small fixed-size
// linear algebra in fusion/trend.
#![allow(clippy::needless_range_loop)]

pub mod corpus;
pub mod dedup;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod pipeline;
pub mod prep;
pub mod rng;
pub mod simaudit;
pub mod trend;

pub use error::{Error, Result};

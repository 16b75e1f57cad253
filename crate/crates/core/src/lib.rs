//! Learning-to-rank test case prioritisation with explanations.
//!
//! - [`dataset`]: CSV ingestion, rank labels, chronological splits, synthetic data.
//! - [`gbdt`]: LambdaMART training, NDCG, ranking and split-count importance.
//! - [`explain`]: Break Down local attributions and contrastive diffs.
//! - [`similarity`]: sign-preserving scaling and cosine similarity of explanations.
//! - [`pipeline`]: per-build experiments, sweeps and cross-build analyses.

mod csvout;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod explain;
pub mod gbdt;
pub mod kv;
pub mod matrix;
pub mod pipeline;
pub mod similarity;

pub use error::{Error, Result};
pub use exec::Parallelism;

//! Benchmark framework for quantifying how prediction uncertainty in tabular
//! classifiers degrades the robustness of proximity-based counterfactual
//! explanations.
//!
//! The pipeline: generate or ingest a tabular dataset, replicate it under a
//! schedule of increasing noise, retrain a classifier per level, generate
//! counterfactuals for the predicted-negative test instances with several
//! search methods, and measure how far each counterfactual drifts from its
//! clean-data baseline in a weighted L1 metric. Summaries, significance
//! tests, and CSV tables fall out the other end.

pub mod data;
pub mod datagen;
pub mod ingest;
pub mod models;
pub mod cfgen;
pub mod robustness;
pub mod stats;
pub mod harness;

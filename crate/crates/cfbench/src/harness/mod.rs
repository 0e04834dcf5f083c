//! Experiment orchestration: a TOML-configured pipeline that generates or
//! ingests a dataset, sweeps a noise schedule, retrains classifiers per
//! level, searches counterfactuals, pairs them against the clean baseline,
//! and emits CSV tables plus a reproducible JSON manifest.
//!
//! Artifacts in a run directory:
//! - `manifest.json` — config hash, seed registry, accuracy and completeness
//!   tables, exclusions, warnings; byte-identical across reruns of the same
//!   config (wall-clock timings go to stdout only, for that reason).
//! - `records.csv` — one paired distance per (replicate, level, model,
//!   method, instance).
//! - `counterfactuals.csv` — every search attempt, valid or not.
//! - `accuracy.csv` — test accuracy per (replicate, level, model).
//! - `descriptive_*.csv`, `comparison.csv`, `median_vs_accuracy.csv` —
//!   derived tables, regenerable from the artifacts above via the `tables`
//!   subcommand.

pub mod config;
pub mod run;
pub mod tables;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robustness::PairedDistanceRecord;

pub use config::{
    DatasetSection, ExperimentConfig, ExperimentSection, MethodSpecConfig, ModelSpecConfig,
    NoiseFamily, NoiseSection, ReportSection, SplitSection,
};
pub use run::{run_experiment, RunOutcome};
pub use tables::{emit_tables, read_run_dir, TableInputs, TablesReport};

/// Seed-stream tag for per-replicate seeds.
pub const REP_TAG: u64 = 10;
/// Seed-stream tag for noise injection.
pub const NOISE_TAG: u64 = 11;
/// Seed-stream tag for model fitting.
pub const MODEL_TAG: u64 = 12;
/// Seed-stream tag for counterfactual search.
pub const CE_TAG: u64 = 13;
/// Seed-stream tag for bootstrap confidence intervals in reports.
pub const REPORT_TAG: u64 = 14;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {what}")]
    BadConfig { what: String },
    #[error("stage {stage:?} failed: {what}")]
    Stage { stage: String, what: String },
    #[error("io error on {path}: {reason}")]
    Io { path: String, reason: String },
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), reason: err.to_string() }
    }
}

/// Test accuracy of one model at one noise level of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub rep: usize,
    pub level: usize,
    pub sigma: f64,
    pub flip: f64,
    pub model: String,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
}

/// Counterfactual search yield for one (replicate, level, model, method)
/// cell: `valid` successes out of `attempted` instances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletenessRow {
    pub rep: usize,
    pub level: usize,
    pub model: String,
    pub method: String,
    pub attempted: usize,
    pub valid: usize,
}

/// A (model, method, bucket) cell dropped from the derived tables because
/// its pooled completeness fell below the configured gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionEntry {
    pub model: String,
    pub method: String,
    pub bucket: String,
    pub completeness: f64,
    pub reason: String,
}

/// One paired-distance record tagged with its replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rep: usize,
    pub record: PairedDistanceRecord,
}

/// The run's reproducibility record. Serialized as `manifest.json`; two runs
/// of the same config produce byte-identical manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Version of this software.
    pub version: String,
    pub experiment_name: String,
    /// SHA-256 of the canonical JSON serialization of the config.
    pub config_hash: String,
    /// Every derived seed, keyed by the pipeline location that consumed it.
    pub seed_registry: BTreeMap<String, u64>,
    /// Stage names in execution order. Values are a fixed marker: wall-clock
    /// durations are printed to stdout instead of stored, so that manifests
    /// stay byte-identical across reruns.
    pub stage_timings: BTreeMap<String, String>,
    /// Mean test accuracy per (model, level), averaged over replicates.
    pub accuracy: Vec<ManifestAccuracyCell>,
    /// Raw completeness counts per (replicate, level, model, method).
    pub completeness: Vec<CompletenessRow>,
    /// Cells dropped from derived tables by the completeness gate.
    pub exclusions: Vec<ExclusionEntry>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    /// The full experiment configuration, embedded so a run directory is
    /// self-describing and derived tables can be regenerated.
    pub config: ExperimentConfig,
}

/// Marker stored instead of a wall-clock duration.
pub const TIMING_MASKED: &str = "logged to stdout; masked here for reproducible artifacts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestAccuracyCell {
    pub model: String,
    pub level: usize,
    pub mean_accuracy: f64,
}

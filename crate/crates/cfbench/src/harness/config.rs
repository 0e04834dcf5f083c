//! TOML experiment configuration: dataset source, noise schedule, model and
//! CE-method lists, split and reporting parameters — plus validation of the
//! whole thing, including model/method compatibility.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datagen::{MockSpec, DEFAULT_POLYTOPE_BINS};
use crate::ingest::IngestConfig;
use crate::robustness::GroupFilter;
use crate::stats::McmcConfig;

use super::HarnessError;

/// Names end up as CSV fields and file-system path components, so they must
/// stay free of delimiters and separators.
fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_one() -> usize {
    1
}
fn default_min_completeness() -> f64 {
    0.9
}
fn default_groups() -> Vec<String> {
    vec!["ALL".into(), "TN".into(), "FN".into()]
}
fn default_target_class() -> u8 {
    1
}
fn default_test_fraction() -> f64 {
    0.3
}
fn default_max_sigma() -> f64 {
    2.0
}
fn default_max_flip() -> f64 {
    0.3
}
fn default_student_t_df() -> f64 {
    3.0
}
fn default_bins() -> usize {
    DEFAULT_POLYTOPE_BINS
}
fn default_class_balance() -> f64 {
    0.6
}
fn default_class_separation() -> f64 {
    1.8
}
fn default_min_category_frequency() -> usize {
    300
}
fn default_subsample_fraction() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_epsilon() -> f64 {
    1e-6
}
fn default_marginal_samples() -> usize {
    16
}
fn default_quantile() -> f64 {
    1.0
}
fn default_budget() -> u64 {
    10_000
}
fn default_proposal_scale() -> f64 {
    1.0
}
fn default_l2() -> f64 {
    1e-4
}
fn default_prior_variance() -> f64 {
    100.0
}
fn default_n_trees() -> usize {
    100
}
fn default_max_depth() -> usize {
    8
}
fn default_min_leaf() -> usize {
    5
}
fn default_hidden() -> Vec<usize> {
    vec![16]
}
fn default_epochs() -> usize {
    150
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_batch_size() -> usize {
    32
}
fn default_bootstrap_resamples() -> usize {
    2000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_mcmc_chains() -> usize {
    4
}
fn default_mcmc_draws() -> usize {
    2000
}
fn default_mcmc_warmup() -> usize {
    1000
}

/// Top-level experiment configuration, read from a TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub dataset: DatasetSection,
    pub noise: NoiseSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub models: Vec<ModelSpecConfig>,
    #[serde(default)]
    pub methods: Vec<MethodSpecConfig>,
    #[serde(default)]
    pub report: ReportSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Independent dataset replicates; records are pooled across them.
    #[serde(default = "default_one")]
    pub n_replicates: usize,
    /// Completeness gate applied per (model, method, bucket).
    #[serde(default = "default_min_completeness")]
    pub min_completeness: f64,
    /// Reporting populations: any of "ALL", "TN", "FN".
    #[serde(default = "default_groups")]
    pub groups: Vec<String>,
    /// Class counterfactuals must reach. 1 explains predicted negatives;
    /// 0 mirrors the direction and explains predicted positives.
    #[serde(default = "default_target_class")]
    pub target_class: u8,
}

/// Where the data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSection {
    /// Synthetic Gaussian-cluster data with optional discretized categorical
    /// columns.
    Mock {
        n_samples: usize,
        n_features: usize,
        n_informative: usize,
        #[serde(default)]
        n_categorical: usize,
        #[serde(default)]
        n_polytopes: usize,
        #[serde(default)]
        non_iid: bool,
        #[serde(default)]
        missing_variables: bool,
        #[serde(default = "default_class_balance")]
        class_balance: f64,
        #[serde(default = "default_class_separation")]
        class_separation: f64,
        /// Quantile bins per polytope column.
        #[serde(default = "default_bins")]
        n_bins: usize,
    },
    /// A CSV file preprocessed through the ingest pipeline.
    Csv {
        path: PathBuf,
        target_column: String,
        positive_label: String,
        #[serde(default)]
        categorical_columns: Vec<String>,
        #[serde(default = "default_min_category_frequency")]
        min_category_frequency: usize,
        #[serde(default = "default_subsample_fraction")]
        subsample_fraction: f64,
        #[serde(default = "default_true")]
        standardize: bool,
    },
}

impl DatasetSection {
    /// Materialize the synthetic spec for one replicate seed.
    pub fn mock_spec(&self, seed: u64) -> Option<(MockSpec, usize)> {
        match self {
            DatasetSection::Mock {
                n_samples,
                n_features,
                n_informative,
                n_categorical,
                n_polytopes,
                non_iid,
                missing_variables,
                class_balance,
                class_separation,
                n_bins,
            } => Some((
                MockSpec {
                    n_samples: *n_samples,
                    n_features: *n_features,
                    n_informative: *n_informative,
                    n_categorical: *n_categorical,
                    n_polytopes: *n_polytopes,
                    non_iid: *non_iid,
                    missing_variables: *missing_variables,
                    class_balance: *class_balance,
                    class_separation: *class_separation,
                    seed,
                },
                *n_bins,
            )),
            DatasetSection::Csv { .. } => None,
        }
    }

    /// Materialize the ingest config for one replicate seed.
    pub fn ingest_config(&self, seed: u64) -> Option<IngestConfig> {
        match self {
            DatasetSection::Mock { .. } => None,
            DatasetSection::Csv {
                path,
                target_column,
                positive_label,
                categorical_columns,
                min_category_frequency,
                subsample_fraction,
                standardize,
            } => Some(IngestConfig {
                path: path.clone(),
                target_column: target_column.clone(),
                positive_label: positive_label.clone(),
                categorical_columns: categorical_columns.clone(),
                min_category_frequency: *min_category_frequency,
                subsample_fraction: *subsample_fraction,
                seed,
                standardize: *standardize,
            }),
        }
    }
}

/// Noise family applied at levels >= 1 (level 0 is always clean).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    /// Additive Gaussian feature noise plus label flips.
    Gaussian,
    /// Heavy-tailed Student-t feature noise plus label flips.
    StudentT,
}

impl Default for NoiseFamily {
    fn default() -> Self {
        NoiseFamily::Gaussian
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Number of noise levels including the clean level 0. Bucketed tables
    /// (descriptives by regime, method comparisons) need at least 3.
    pub n_levels: usize,
    #[serde(default = "default_max_sigma")]
    pub max_sigma: f64,
    #[serde(default = "default_max_flip")]
    pub max_flip: f64,
    #[serde(default)]
    pub family: NoiseFamily,
    #[serde(default = "default_student_t_df")]
    pub student_t_df: f64,
    /// Continuous columns (by name) removed at every level >= 1. For mock
    /// datasets flagged `missing_variables` and an empty list here, the
    /// first continuous column is omitted.
    #[serde(default)]
    pub omit_columns: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { test_fraction: default_test_fraction() }
    }
}

/// One classifier to train per noise level.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpecConfig {
    Logistic {
        #[serde(default = "default_l2")]
        l2: f64,
        #[serde(default)]
        name: Option<String>,
    },
    BayesLogistic {
        #[serde(default = "default_prior_variance")]
        prior_variance: f64,
        #[serde(default)]
        name: Option<String>,
    },
    RandomForest {
        #[serde(default = "default_n_trees")]
        n_trees: usize,
        #[serde(default = "default_max_depth")]
        max_depth: usize,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
        #[serde(default)]
        name: Option<String>,
    },
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "default_epochs")]
        epochs: usize,
        #[serde(default = "default_learning_rate")]
        learning_rate: f64,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
        #[serde(default)]
        name: Option<String>,
    },
}

impl ModelSpecConfig {
    /// Table name: the explicit `name` or the model's default tag.
    pub fn name(&self) -> String {
        let (explicit, tag) = match self {
            ModelSpecConfig::Logistic { name, .. } => (name, "lr"),
            ModelSpecConfig::BayesLogistic { name, .. } => (name, "blr"),
            ModelSpecConfig::RandomForest { name, .. } => (name, "rf"),
            ModelSpecConfig::Mlp { name, .. } => (name, "nn"),
        };
        explicit.clone().unwrap_or_else(|| tag.to_string())
    }
}

/// One counterfactual search method to run per model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpecConfig {
    /// Exact weighted-L1 minimization against a linear model.
    Milp {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        name: Option<String>,
    },
    /// Exact minimization against the posterior-mean linear model.
    MilpMean {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        name: Option<String>,
    },
    /// Chance-constrained minimization over posterior draws.
    MilpMarginal {
        #[serde(default = "default_marginal_samples")]
        samples: usize,
        #[serde(default = "default_quantile")]
        quantile: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        name: Option<String>,
    },
    /// Nearest-unlike-neighbor greedy substitution.
    Nice {
        #[serde(default)]
        name: Option<String>,
    },
    /// Seeded Gaussian-proposal random search.
    RandomSearch {
        #[serde(default = "default_budget")]
        budget: u64,
        #[serde(default = "default_proposal_scale")]
        proposal_scale: f64,
        #[serde(default)]
        name: Option<String>,
    },
}

impl MethodSpecConfig {
    pub fn name(&self) -> String {
        let (explicit, tag) = match self {
            MethodSpecConfig::Milp { name, .. } => (name, "milp"),
            MethodSpecConfig::MilpMean { name, .. } => (name, "milp_mean"),
            MethodSpecConfig::MilpMarginal { name, .. } => (name, "milp_marg"),
            MethodSpecConfig::Nice { name } => (name, "nice"),
            MethodSpecConfig::RandomSearch { name, .. } => (name, "random"),
        };
        explicit.clone().unwrap_or_else(|| tag.to_string())
    }

    /// Whether this method can run against the given model kind.
    pub fn compatible(&self, model: &ModelSpecConfig) -> bool {
        match self {
            MethodSpecConfig::Milp { .. } => matches!(model, ModelSpecConfig::Logistic { .. }),
            MethodSpecConfig::MilpMean { .. } | MethodSpecConfig::MilpMarginal { .. } => {
                matches!(model, ModelSpecConfig::BayesLogistic { .. })
            }
            MethodSpecConfig::Nice { .. } | MethodSpecConfig::RandomSearch { .. } => true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    #[serde(default = "default_bootstrap_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Optional cap on counterfactual instances per (level, model):
    /// the lowest-id instances are kept.
    #[serde(default)]
    pub max_ce_instances: Option<usize>,
    #[serde(default = "default_mcmc_chains")]
    pub mcmc_chains: usize,
    #[serde(default = "default_mcmc_draws")]
    pub mcmc_draws: usize,
    #[serde(default = "default_mcmc_warmup")]
    pub mcmc_warmup: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            bootstrap_resamples: default_bootstrap_resamples(),
            alpha: default_alpha(),
            max_ce_instances: None,
            mcmc_chains: default_mcmc_chains(),
            mcmc_draws: default_mcmc_draws(),
            mcmc_warmup: default_mcmc_warmup(),
        }
    }
}

impl ExperimentConfig {
    /// Parse a TOML string.
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::BadConfig { what: e.to_string() })
    }

    /// Reporting group filters in config order.
    pub fn group_filters(&self) -> Result<Vec<GroupFilter>, HarnessError> {
        self.experiment
            .groups
            .iter()
            .map(|g| match g.as_str() {
                "ALL" => Ok(GroupFilter::All),
                "TN" => Ok(GroupFilter::TrueNegative),
                "FN" => Ok(GroupFilter::FalseNegative),
                other => Err(HarnessError::BadConfig {
                    what: format!("unknown group {other:?}; expected ALL, TN, or FN"),
                }),
            })
            .collect()
    }

    /// Sampler configuration for posterior method comparisons.
    pub fn mcmc(&self) -> McmcConfig {
        McmcConfig {
            chains: self.report.mcmc_chains,
            draws: self.report.mcmc_draws,
            warmup: self.report.mcmc_warmup,
            seed: self.experiment.seed,
        }
    }

    /// Check everything that can be checked before touching data.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |what: String| Err(HarnessError::BadConfig { what });

        if !valid_name(&self.experiment.name) {
            return bad(format!(
                "experiment.name {:?} must be nonempty and use only letters, digits, '_', '-', '.'",
                self.experiment.name
            ));
        }
        if self.models.is_empty() {
            return bad("at least one [[models]] entry is required".into());
        }
        if self.methods.is_empty() {
            return bad("at least one [[methods]] entry is required".into());
        }
        if self.noise.n_levels < 2 {
            return bad(format!("noise.n_levels must be >= 2, got {}", self.noise.n_levels));
        }
        if self.experiment.n_replicates == 0 {
            return bad("experiment.n_replicates must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.experiment.min_completeness) {
            return bad(format!(
                "experiment.min_completeness must lie in [0, 1], got {}",
                self.experiment.min_completeness
            ));
        }
        if self.experiment.target_class > 1 {
            return bad(format!(
                "experiment.target_class must be 0 or 1, got {}",
                self.experiment.target_class
            ));
        }
        if self.experiment.groups.is_empty() {
            return bad("experiment.groups must not be empty".into());
        }
        {
            let mut seen = std::collections::BTreeSet::new();
            for g in &self.experiment.groups {
                if !seen.insert(g.clone()) {
                    return bad(format!("duplicate group {g:?}"));
                }
            }
        }
        self.group_filters()?;

        match &self.dataset {
            DatasetSection::Mock { n_bins, .. } => {
                let (spec, _) = self.dataset.mock_spec(0).expect("mock variant");
                spec.validate()
                    .map_err(|e| HarnessError::BadConfig { what: format!("dataset: {e}") })?;
                if *n_bins < 2 {
                    return bad(format!("dataset.n_bins must be >= 2, got {n_bins}"));
                }
            }
            DatasetSection::Csv { .. } => {
                let ing = self.dataset.ingest_config(0).expect("csv variant");
                ing.validate()
                    .map_err(|e| HarnessError::BadConfig { what: format!("dataset: {e}") })?;
            }
        }

        if !(self.noise.max_sigma.is_finite() && self.noise.max_sigma >= 0.0) {
            return bad(format!("noise.max_sigma must be finite and >= 0, got {}", self.noise.max_sigma));
        }
        if !(0.0..=1.0).contains(&self.noise.max_flip) {
            return bad(format!("noise.max_flip must lie in [0, 1], got {}", self.noise.max_flip));
        }
        if self.noise.family == NoiseFamily::StudentT
            && !(self.noise.student_t_df.is_finite() && self.noise.student_t_df > 0.0)
        {
            return bad(format!(
                "noise.student_t_df must be positive, got {}",
                self.noise.student_t_df
            ));
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return bad(format!(
                "split.test_fraction must lie in (0, 1), got {}",
                self.split.test_fraction
            ));
        }

        let mut model_names = std::collections::BTreeSet::new();
        for m in &self.models {
            if !valid_name(&m.name()) {
                return bad(format!(
                    "model name {:?} must be nonempty and use only letters, digits, '_', '-', '.'",
                    m.name()
                ));
            }
            if !model_names.insert(m.name()) {
                return bad(format!("duplicate model name {:?}", m.name()));
            }
            match m {
                ModelSpecConfig::Logistic { l2, .. } => {
                    if !(l2.is_finite() && *l2 >= 0.0) {
                        return bad(format!("model {}: l2 must be finite and >= 0", m.name()));
                    }
                }
                ModelSpecConfig::BayesLogistic { prior_variance, .. } => {
                    if !(prior_variance.is_finite() && *prior_variance > 0.0) {
                        return bad(format!("model {}: prior_variance must be positive", m.name()));
                    }
                }
                ModelSpecConfig::RandomForest { n_trees, max_depth, min_leaf, .. } => {
                    if *n_trees == 0 || *max_depth == 0 || *min_leaf == 0 {
                        return bad(format!(
                            "model {}: n_trees, max_depth, min_leaf must all be >= 1",
                            m.name()
                        ));
                    }
                }
                ModelSpecConfig::Mlp { hidden, epochs, learning_rate, batch_size, .. } => {
                    if hidden.is_empty() || hidden.contains(&0) {
                        return bad(format!("model {}: hidden layers must be nonempty and positive", m.name()));
                    }
                    if *epochs == 0 || *batch_size == 0 {
                        return bad(format!("model {}: epochs and batch_size must be >= 1", m.name()));
                    }
                    if !(learning_rate.is_finite() && *learning_rate > 0.0) {
                        return bad(format!("model {}: learning_rate must be positive", m.name()));
                    }
                }
            }
        }

        let mut method_names = std::collections::BTreeSet::new();
        for method in &self.methods {
            if !valid_name(&method.name()) {
                return bad(format!(
                    "method name {:?} must be nonempty and use only letters, digits, '_', '-', '.'",
                    method.name()
                ));
            }
            if !method_names.insert(method.name()) {
                return bad(format!("duplicate method name {:?}", method.name()));
            }
            match method {
                MethodSpecConfig::Milp { epsilon, .. }
                | MethodSpecConfig::MilpMean { epsilon, .. } => {
                    if !(epsilon.is_finite() && *epsilon > 0.0) {
                        return bad(format!("method {}: epsilon must be positive", method.name()));
                    }
                }
                MethodSpecConfig::MilpMarginal { samples, quantile, epsilon, .. } => {
                    if *samples == 0 {
                        return bad(format!("method {}: samples must be >= 1", method.name()));
                    }
                    if !(quantile.is_finite() && *quantile > 0.0 && *quantile <= 1.0) {
                        return bad(format!(
                            "method {}: quantile must lie in (0, 1]",
                            method.name()
                        ));
                    }
                    if !(epsilon.is_finite() && *epsilon > 0.0) {
                        return bad(format!("method {}: epsilon must be positive", method.name()));
                    }
                }
                MethodSpecConfig::Nice { .. } => {}
                MethodSpecConfig::RandomSearch { budget, proposal_scale, .. } => {
                    if *budget == 0 {
                        return bad(format!("method {}: budget must be >= 1", method.name()));
                    }
                    if !(proposal_scale.is_finite() && *proposal_scale > 0.0) {
                        return bad(format!(
                            "method {}: proposal_scale must be positive",
                            method.name()
                        ));
                    }
                }
            }
            if !self.models.iter().any(|m| method.compatible(m)) {
                return bad(format!(
                    "method {} has no compatible model: milp needs a logistic model, \
                     milp_mean/milp_marginal need a bayes_logistic model",
                    method.name()
                ));
            }
        }

        if self.report.bootstrap_resamples == 0 {
            return bad("report.bootstrap_resamples must be >= 1".into());
        }
        if !(self.report.alpha > 0.0 && self.report.alpha < 1.0) {
            return bad(format!("report.alpha must lie in (0, 1), got {}", self.report.alpha));
        }
        if self.report.max_ce_instances == Some(0) {
            return bad("report.max_ce_instances must be >= 1 when set".into());
        }
        if self.report.mcmc_chains < 2 || self.report.mcmc_draws < 10 || self.report.mcmc_warmup == 0
        {
            return bad("report.mcmc_chains >= 2, mcmc_draws >= 10, mcmc_warmup >= 1 required".into());
        }
        Ok(())
    }
}

//! Counterfactual explanation generators.
//!
//! Four search strategies produce a [`Counterfactual`] for one instance:
//!
//! * [`milp_counterfactual`] — exact minimizer of the weighted ℓ1 cost for a
//!   linear model, enumerating or branch-and-bounding over categorical
//!   assignments with a closed-form continuous subproblem.
//! * [`milp_mean_counterfactual`] / [`milp_marginal_counterfactual`] — the
//!   same optimizer applied to a Bayesian linear model's posterior mean, or
//!   with the margin enforced across a set of posterior draws.
//! * [`nice_counterfactual`] — nearest-unlike-neighbor guided greedy
//!   substitution of whole features.
//! * [`random_search_counterfactual`] — budgeted random proposal search that
//!   works with any classifier.
//!
//! All generators are deterministic under a fixed seed and configuration.

mod lp;
mod milp;
mod nice;
mod random;

pub use lp::{solve_lp, LpOutcome, LpProblem, LpRelation};
pub use milp::{milp_counterfactual, milp_marginal_counterfactual, milp_mean_counterfactual};
pub use nice::nice_counterfactual;
pub use random::random_search_counterfactual;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{validate_row, DataError, FeatureSchema, Pairable, WeightVector};
use crate::models::{Classifier, ModelError};
use crate::robustness::weighted_l1;

/// Errors from counterfactual generation.
///
/// Note that an *infeasible* search is not an error: it yields a
/// [`Counterfactual`] with `valid = false` and a reason string.
#[derive(Debug, Error)]
pub enum CfgenError {
    #[error("invalid search parameter: {what}")]
    BadParam { what: String },
    #[error("instance has {got} columns but the schema expects {want}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("quantile {quantile} over {samples} draws requires enumerating {subsets} constraint subsets (cap {cap})")]
    TooManySubsets { quantile: f64, samples: usize, subsets: u128, cap: u128 },
    #[error("partial-quantile search requires exhaustive category enumeration but the schema has {combos} categorical combinations (cap {cap})")]
    PartialQuantileNeedsEnumeration { combos: u128, cap: u128 },
    #[error("linear subproblem solver failed: {what}")]
    LpFailure { what: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One counterfactual search result for a single instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    /// Stable identifier of the explained instance.
    pub id: u64,
    /// The instance being explained.
    pub original: Vec<f64>,
    /// The proposed counterfactual point (equals `original` when invalid).
    pub point: Vec<f64>,
    /// Generator tag, e.g. "milp", "milp_mean", "milp_marg", "nice", "random".
    pub method: String,
    /// Whether `point` flips the prediction while satisfying the schema.
    pub valid: bool,
    /// Weighted ℓ1 distance from `original` (NaN when invalid).
    pub cost: f64,
    /// Search effort consumed: model evaluations for the sampling-based
    /// generators, candidate subproblems solved for the exact optimizer.
    pub evaluations: u64,
    /// Why the search failed, when `valid` is false.
    pub reason: Option<String>,
}

impl Pairable for Counterfactual {
    fn pair_id(&self) -> u64 {
        self.id
    }
    fn pair_valid(&self) -> bool {
        self.valid
    }
}

impl Counterfactual {
    /// Build the standard invalid result: the point stays at the original.
    pub(crate) fn invalid(
        id: u64,
        original: &[f64],
        method: &str,
        evaluations: u64,
        reason: impl Into<String>,
    ) -> Counterfactual {
        Counterfactual {
            id,
            original: original.to_vec(),
            point: original.to_vec(),
            method: method.to_string(),
            valid: false,
            cost: f64::NAN,
            evaluations,
            reason: Some(reason.into()),
        }
    }
}

/// Shared knobs for all counterfactual searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeSearchConfig {
    /// Required score margin past the decision boundary (must be > 0).
    pub epsilon_margin: f64,
    /// Maximum model evaluations for budgeted searches.
    pub budget: u64,
    /// Base seed; per-instance streams are derived from it.
    pub seed: u64,
    /// Class the counterfactual must reach (0 or 1).
    pub target_class: u8,
}

impl Default for CeSearchConfig {
    fn default() -> Self {
        CeSearchConfig { epsilon_margin: 1e-6, budget: 10_000, seed: 0, target_class: 1 }
    }
}

impl CeSearchConfig {
    pub fn validate(&self) -> Result<(), CfgenError> {
        if !(self.epsilon_margin > 0.0) || !self.epsilon_margin.is_finite() {
            return Err(CfgenError::BadParam {
                what: format!("epsilon_margin must be a positive real, got {}", self.epsilon_margin),
            });
        }
        if self.target_class > 1 {
            return Err(CfgenError::BadParam {
                what: format!("target_class must be 0 or 1, got {}", self.target_class),
            });
        }
        Ok(())
    }
}

/// Fraction of attempts that produced a valid counterfactual.
pub fn completeness(attempts: &[Counterfactual]) -> Result<f64, CfgenError> {
    if attempts.is_empty() {
        return Err(CfgenError::BadParam { what: "completeness of an empty attempt list is undefined".into() });
    }
    let valid = attempts.iter().filter(|a| a.valid).count();
    Ok(valid as f64 / attempts.len() as f64)
}

/// Re-check everything a valid counterfactual promises: the model re-predicts
/// the target class, the point satisfies indicator/group constraints and
/// continuous bounds, and the stored cost matches an independent recompute to
/// 1e-9. Returns the first violation found. Invalid counterfactuals pass
/// trivially (they promise nothing).
pub fn verify_counterfactual(
    cf: &Counterfactual,
    m: &dyn Classifier,
    w: &WeightVector,
    schema: &FeatureSchema,
    target_class: u8,
) -> Result<(), String> {
    if !cf.valid {
        return Ok(());
    }
    let predicted = m.predict(&cf.point);
    if predicted != target_class {
        return Err(format!("counterfactual {} re-predicts class {predicted}, wanted {target_class}", cf.id));
    }
    let issues = validate_row(schema, 0, &cf.point);
    if let Some(first) = issues.first() {
        return Err(format!("counterfactual {} violates the schema: {first}", cf.id));
    }
    for (j, &v) in cf.point.iter().enumerate() {
        if let Some((lo, hi)) = schema.bounds(j) {
            if v < lo - 1e-12 || v > hi + 1e-12 {
                return Err(format!("counterfactual {} column {j} value {v} outside [{lo}, {hi}]", cf.id));
            }
        }
    }
    let recomputed = weighted_l1(&cf.original, &cf.point, w).map_err(|e| e.to_string())?;
    if (recomputed - cf.cost).abs() > 1e-9 {
        return Err(format!("counterfactual {} stores cost {} but recomputes to {recomputed}", cf.id, cf.cost));
    }
    Ok(())
}

/// Probability the model assigns to the target class.
pub(crate) fn target_proba(m: &dyn Classifier, x: &[f64], target_class: u8) -> f64 {
    let p = m.predict_proba(x);
    if target_class == 1 {
        p
    } else {
        1.0 - p
    }
}

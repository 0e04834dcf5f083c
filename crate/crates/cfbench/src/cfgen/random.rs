//! Budgeted random counterfactual search for arbitrary classifiers.
//!
//! Candidates are always schema-valid: continuous coordinates get Gaussian
//! perturbations (clamped to bounds) around the best valid point found so
//! far, and each one-hot group is occasionally resampled to a uniformly
//! random category. The proposal scale shrinks geometrically whenever a
//! cheaper valid candidate is found, so the search refines around the
//! boundary as the budget is spent.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{CeSearchConfig, CfgenError, Counterfactual};
use crate::data::{FeatureSchema, WeightVector};
use crate::datagen::derive_seed;
use crate::models::Classifier;
use crate::robustness::weighted_l1;

/// Per-group probability of resampling the category in one proposal.
const GROUP_FLIP_PROB: f64 = 0.2;
/// Multiplier applied to the proposal scale after each improvement.
const SCALE_SHRINK: f64 = 0.9;
/// The scale never shrinks below this fraction of its starting value.
const SCALE_FLOOR_FRACTION: f64 = 1e-3;
/// Stream tag separating this generator's randomness from the injectors'.
const RANDOM_SEARCH_TAG: u64 = 5;

/// Random proposal search. The first evaluation is the instance itself, so a
/// budget of 1 suffices when the instance is already on the target side.
/// Deterministic under (config seed, instance id).
#[allow(clippy::too_many_arguments)]
pub fn random_search_counterfactual(
    m: &dyn Classifier,
    id: u64,
    x: &[f64],
    w: &WeightVector,
    schema: &FeatureSchema,
    cfg: &CeSearchConfig,
    proposal_scale: f64,
) -> Result<Counterfactual, CfgenError> {
    cfg.validate()?;
    if cfg.budget == 0 {
        return Err(CfgenError::BadParam { what: "random search requires budget >= 1".into() });
    }
    if !(proposal_scale > 0.0) || !proposal_scale.is_finite() {
        return Err(CfgenError::BadParam {
            what: format!("proposal_scale must be a positive real, got {proposal_scale}"),
        });
    }
    let d = schema.n_columns();
    if x.len() != d || w.w.len() != d {
        return Err(CfgenError::DimensionMismatch { want: d, got: x.len() });
    }

    let mut evaluations: u64 = 1;
    if m.predict(x) == cfg.target_class {
        return Ok(Counterfactual {
            id,
            original: x.to_vec(),
            point: x.to_vec(),
            method: "random".into(),
            valid: true,
            cost: 0.0,
            evaluations,
            reason: None,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, RANDOM_SEARCH_TAG, id]));
    let cont = schema.continuous_indices();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut center = x.to_vec();
    let mut scale = proposal_scale;
    let floor = SCALE_FLOOR_FRACTION * proposal_scale;

    while evaluations < cfg.budget {
        let mut candidate = center.clone();
        for &j in &cont {
            let step: f64 = rng.sample(StandardNormal);
            let mut value = center[j] + scale * step;
            if let Some((lo, hi)) = schema.bounds(j) {
                value = value.clamp(lo, hi);
            }
            candidate[j] = value;
        }
        for g in 0..schema.groups.len() {
            if rng.random_bool(GROUP_FLIP_PROB) {
                let category = rng.random_range(0..schema.groups[g].n_categories());
                schema.encode_category(g, category, &mut candidate)?;
            }
        }
        evaluations += 1;
        if m.predict(&candidate) == cfg.target_class {
            let cost = weighted_l1(x, &candidate, w)
                .map_err(|e| CfgenError::BadParam { what: e.to_string() })?;
            if best.as_ref().is_none_or(|(bc, _)| cost < *bc) {
                center.copy_from_slice(&candidate);
                best = Some((cost, candidate));
                scale = (scale * SCALE_SHRINK).max(floor);
            }
        }
    }

    match best {
        Some((cost, point)) => Ok(Counterfactual {
            id,
            original: x.to_vec(),
            point,
            method: "random".into(),
            valid: true,
            cost,
            evaluations,
            reason: None,
        }),
        None => Ok(Counterfactual::invalid(
            id,
            x,
            "random",
            evaluations,
            "budget exhausted without finding a valid candidate",
        )),
    }
}

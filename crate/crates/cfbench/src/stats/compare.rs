//! Head-to-head comparison of counterfactual methods on a shared set of
//! instances: pick the method with the smallest median relative distance as
//! the reference, then test every other method against it pairwise.

use std::collections::BTreeMap;

use super::posterior::{posterior_p_best, McmcConfig};
use super::wilcoxon::{rank_biserial, wilcoxon_signed_rank};
use super::{significance_stars, StatsError};

/// Per-method input to [`compare_methods`]: the method's share of instances
/// for which it produced a valid counterfactual, and its paired
/// `(instance id, relative distance)` records for one bucket.
#[derive(Debug, Clone)]
pub struct MethodRecords {
    pub method: String,
    /// Fraction of attempted instances with a valid counterfactual, in
    /// [0, 1]; methods below the gate are excluded from the comparison.
    pub completeness: f64,
    pub values: Vec<(u64, f64)>,
}

/// One comparison row. Statistical fields are `None` when the method could
/// not be paired with the reference on at least 5 shared instances.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonResult {
    pub method: String,
    /// True for the reference method itself.
    pub is_reference: bool,
    /// Median relative distance over the method's own records.
    pub median: f64,
    /// Instances shared with the reference (for the reference: its record
    /// count).
    pub n_pairs: usize,
    /// Reference median minus this method's median.
    pub median_delta: Option<f64>,
    /// Wilcoxon signed-rank statistic W+ of method vs reference.
    pub statistic: Option<f64>,
    /// One-sided p-value for "method's distances are larger than the
    /// reference's". The reference row carries 1.0.
    pub p_value: Option<f64>,
    /// Significance stars for `p_value`.
    pub stars: String,
    /// Rank-biserial effect size of the paired differences.
    pub effect_size: Option<f64>,
    /// Posterior probability that this method's distances are centered
    /// above the reference's (so: that the reference really is better).
    /// The reference row carries 0.5.
    pub posterior_p_best: Option<f64>,
    /// Monte-Carlo standard error of the posterior probability.
    pub posterior_mc_se: Option<f64>,
    /// False when the posterior sampler failed its convergence check.
    pub posterior_converged: Option<bool>,
}

/// Outcome of a method comparison within one bucket.
#[derive(Debug, Clone)]
pub struct MethodComparison {
    /// Method with the smallest median relative distance (ties broken by
    /// name), or `None` when nothing passed the completeness gate.
    pub reference: Option<String>,
    /// One row per admitted method, in input order.
    pub rows: Vec<ComparisonResult>,
    /// Methods left out, with the reason.
    pub excluded: Vec<(String, String)>,
    /// Set when the comparison could not run at all.
    pub note: Option<String>,
}

fn validated_map(records: &MethodRecords) -> Result<BTreeMap<u64, f64>, StatsError> {
    let mut map = BTreeMap::new();
    for &(id, value) in &records.values {
        if !value.is_finite() {
            return Err(StatsError::BadParam {
                what: format!("method {}: non-finite distance for id {}", records.method, id),
            });
        }
        if map.insert(id, value).is_some() {
            return Err(StatsError::BadParam {
                what: format!("method {}: duplicate record for id {}", records.method, id),
            });
        }
    }
    Ok(map)
}

/// Compare methods on one bucket of paired relative distances.
///
/// Methods whose completeness falls below `min_completeness` (or that have
/// no records) are excluded up front. Among the rest, the method with the
/// smallest median relative distance becomes the reference; every other
/// method is tested against it on the instances they share. Fewer than 5
/// shared instances leaves the statistical fields undefined (`None`).
pub fn compare_methods(
    inputs: &[MethodRecords],
    min_completeness: f64,
    mcmc: &McmcConfig,
) -> Result<MethodComparison, StatsError> {
    if inputs.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if !(0.0..=1.0).contains(&min_completeness) {
        return Err(StatsError::BadParam {
            what: format!("min_completeness must lie in [0, 1], got {min_completeness}"),
        });
    }
    {
        let mut names: Vec<&str> = inputs.iter().map(|m| m.method.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(StatsError::BadParam { what: "duplicate method names".into() });
        }
    }

    let mut excluded = Vec::new();
    let mut admitted: Vec<(&MethodRecords, BTreeMap<u64, f64>, f64)> = Vec::new();
    for rec in inputs {
        if !(0.0..=1.0).contains(&rec.completeness) {
            return Err(StatsError::BadParam {
                what: format!("method {}: completeness {} outside [0, 1]", rec.method, rec.completeness),
            });
        }
        if rec.completeness < min_completeness {
            excluded.push((
                rec.method.clone(),
                format!(
                    "completeness {:.3} below the {:.3} gate",
                    rec.completeness, min_completeness
                ),
            ));
            continue;
        }
        if rec.values.is_empty() {
            excluded.push((rec.method.clone(), "no paired records".into()));
            continue;
        }
        let map = validated_map(rec)?;
        let med = crate::robustness::median(&rec.values.iter().map(|(_, v)| *v).collect::<Vec<_>>());
        admitted.push((rec, map, med));
    }

    if admitted.is_empty() {
        return Ok(MethodComparison {
            reference: None,
            rows: Vec::new(),
            excluded,
            note: Some("no method passed the completeness gate".into()),
        });
    }

    // Reference: smallest median, ties broken by lexicographically smallest
    // method name so the choice is deterministic.
    let (ref_rec, ref_map, ref_median) = admitted
        .iter()
        .min_by(|a, b| {
            a.2.partial_cmp(&b.2)
                .expect("medians are finite")
                .then_with(|| a.0.method.cmp(&b.0.method))
        })
        .map(|(r, m, med)| (*r, m.clone(), *med))
        .expect("admitted is nonempty");

    let mut rows = Vec::with_capacity(admitted.len());
    for (rec, map, med) in &admitted {
        if rec.method == ref_rec.method {
            rows.push(ComparisonResult {
                method: rec.method.clone(),
                is_reference: true,
                median: *med,
                n_pairs: map.len(),
                median_delta: Some(0.0),
                statistic: None,
                p_value: Some(1.0),
                stars: String::new(),
                effect_size: Some(0.0),
                posterior_p_best: Some(0.5),
                posterior_mc_se: Some(0.0),
                posterior_converged: Some(true),
            });
            continue;
        }

        // Pair on the id intersection, in ascending id order.
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (id, v) in map {
            if let Some(r) = ref_map.get(id) {
                x.push(*v);
                y.push(*r);
            }
        }
        let n_pairs = x.len();
        if n_pairs < 5 {
            rows.push(ComparisonResult {
                method: rec.method.clone(),
                is_reference: false,
                median: *med,
                n_pairs,
                median_delta: None,
                statistic: None,
                p_value: None,
                stars: String::new(),
                effect_size: None,
                posterior_p_best: None,
                posterior_mc_se: None,
                posterior_converged: None,
            });
            continue;
        }

        let test = wilcoxon_signed_rank(&x, &y)?;
        let effect = rank_biserial(&x, &y)?;
        let diffs: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let posterior = posterior_p_best(&diffs, mcmc)?;
        rows.push(ComparisonResult {
            method: rec.method.clone(),
            is_reference: false,
            median: *med,
            n_pairs,
            median_delta: Some(ref_median - *med),
            statistic: Some(test.statistic),
            p_value: Some(test.p_value),
            stars: significance_stars(test.p_value).to_string(),
            effect_size: Some(effect),
            posterior_p_best: Some(posterior.p_best),
            posterior_mc_se: Some(posterior.mc_se),
            posterior_converged: Some(posterior.converged),
        });
    }

    Ok(MethodComparison {
        reference: Some(ref_rec.method.clone()),
        rows,
        excluded,
        note: None,
    })
}

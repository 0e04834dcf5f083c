//! Robustness metrics: the weighted-L1 distance between paired
//! counterfactuals, its weights estimated from the clean training split, and
//! distribution summaries with bootstrap confidence intervals.
//!
//! Weights follow the inverse-dispersion convention: continuous columns get
//! 1/MAD, indicator columns get 1/(Φ⁻¹(0.75)·σ) so that a MAD and a standard
//! deviation talk about the same scale (Φ⁻¹(0.75)·σ is the MAD of a normal
//! with that σ). Weights are estimated exactly once, on the noise-level-0
//! training split, and shared by every downstream distance.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::data::{Dataset, WeightVector};

/// Errors raised by distance and summary computation.
#[derive(Debug, Error)]
pub enum RobustnessError {
    #[error("vectors have different lengths: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("weight vector has {w} entries but the points have {d}")]
    WeightMismatch { w: usize, d: usize },
    #[error("baseline point has zero weighted norm; relative distance undefined")]
    ZeroNormBaseline,
    #[error("cannot summarize an empty record set")]
    EmptyInput,
    #[error("bucketing needs at least 3 distinct noise levels, got {got}")]
    TooFewLevels { got: usize },
    #[error("non-finite value encountered in {what}")]
    NonFinite { what: String },
}

// ── Quantiles ───────────────────────────────────────────────────────────────

/// Linear-interpolation quantile (the common "type 7" rule) on an ascending
/// slice: index h = (n-1)p, interpolate between the two bracketing values.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]), "input must be sorted");
    let p = p.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 == sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Median of an unsorted slice (sorts a copy).
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile(&sorted, 0.5)
}

/// Standard-normal quantile at 0.75, the constant converting a standard
/// deviation into the MAD of a normal distribution.
pub fn normal_quantile_75() -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.75)
}

// ── Weights ─────────────────────────────────────────────────────────────────

/// Why a column's weight did not come from the primary dispersion estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WeightFallback {
    /// Continuous column with MAD = 0; the σ-based rule was used instead.
    MadZeroUsedSigma { column: usize, name: String },
    /// Constant column (no dispersion at all); unit weight applied.
    ConstantColumn { column: usize, name: String },
}

/// Estimated weight vector plus a report of any degenerate columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEstimate {
    pub weights: WeightVector,
    pub fallbacks: Vec<WeightFallback>,
}

/// Estimate per-column weights on a training split: 1/MAD for continuous
/// columns, 1/(Φ⁻¹(0.75)·σ) for indicators (population σ). Degenerate
/// columns fall back to the σ rule and finally to unit weight, and each
/// fallback is flagged. All weights come out strictly positive and finite.
pub fn feature_weights(train: &Dataset, reference_split_id: &str) -> Result<WeightEstimate, RobustnessError> {
    if train.n() == 0 {
        return Err(RobustnessError::EmptyInput);
    }
    let c = normal_quantile_75();
    let mut w = Vec::with_capacity(train.d());
    let mut fallbacks = Vec::new();
    for j in 0..train.d() {
        let values: Vec<f64> = train.x.iter().map(|row| row[j]).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RobustnessError::NonFinite { what: format!("column {j}") });
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let sigma = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
        let name = &train.schema.columns[j].name;
        let weight = if train.schema.columns[j].is_continuous() {
            let med = median(&values);
            let mad = median(&values.iter().map(|v| (v - med).abs()).collect::<Vec<_>>());
            if mad > 0.0 {
                1.0 / mad
            } else if sigma > 0.0 {
                fallbacks.push(WeightFallback::MadZeroUsedSigma { column: j, name: name.clone() });
                1.0 / (c * sigma)
            } else {
                fallbacks.push(WeightFallback::ConstantColumn { column: j, name: name.clone() });
                1.0
            }
        } else if sigma > 0.0 {
            1.0 / (c * sigma)
        } else {
            fallbacks.push(WeightFallback::ConstantColumn { column: j, name: name.clone() });
            1.0
        };
        w.push(weight);
    }
    Ok(WeightEstimate {
        weights: WeightVector { w, reference_split_id: reference_split_id.to_string() },
        fallbacks,
    })
}

// ── Distances ───────────────────────────────────────────────────────────────

/// Weighted L1 distance `Σ_j w_j |a_j - b_j|`.
pub fn weighted_l1(a: &[f64], b: &[f64], w: &WeightVector) -> Result<f64, RobustnessError> {
    if a.len() != b.len() {
        return Err(RobustnessError::DimensionMismatch { a: a.len(), b: b.len() });
    }
    if w.w.len() != a.len() {
        return Err(RobustnessError::WeightMismatch { w: w.w.len(), d: a.len() });
    }
    Ok(a.iter().zip(b).zip(&w.w).map(|((x, y), wj)| wj * (x - y).abs()).sum())
}

/// Distance normalized by the baseline's own weighted norm:
/// `Σ w|a-b| / Σ w|b|`. The baseline `b` is the clean-level counterfactual.
pub fn relative_distance(a: &[f64], b: &[f64], w: &WeightVector) -> Result<f64, RobustnessError> {
    let num = weighted_l1(a, b, w)?;
    let denom: f64 = b.iter().zip(&w.w).map(|(y, wj)| wj * y.abs()).sum();
    if denom <= 0.0 {
        return Err(RobustnessError::ZeroNormBaseline);
    }
    Ok(num / denom)
}

// ── Records and summaries ───────────────────────────────────────────────────

/// Confusion-split membership of a counterfactual's original instance (the
/// generation population is the predicted-negative test set, so every
/// instance is either a true or a false negative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstanceGroup {
    #[serde(rename = "TN")]
    TrueNegative,
    #[serde(rename = "FN")]
    FalseNegative,
}

impl std::fmt::Display for InstanceGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InstanceGroup::TrueNegative => write!(f, "TN"),
            InstanceGroup::FalseNegative => write!(f, "FN"),
        }
    }
}

/// Row filter used when emitting per-group tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupFilter {
    All,
    TrueNegative,
    FalseNegative,
}

impl GroupFilter {
    pub fn accepts(&self, group: InstanceGroup) -> bool {
        match self {
            GroupFilter::All => true,
            GroupFilter::TrueNegative => group == InstanceGroup::TrueNegative,
            GroupFilter::FalseNegative => group == InstanceGroup::FalseNegative,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            GroupFilter::All => "ALL",
            GroupFilter::TrueNegative => "TN",
            GroupFilter::FalseNegative => "FN",
        }
    }
}

/// One paired distance: how far an instance's counterfactual at some noise
/// level drifted from its clean-level baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDistanceRecord {
    pub id: u64,
    pub noise_level: usize,
    pub model: String,
    pub method: String,
    pub group: InstanceGroup,
    pub distance: f64,
    pub relative_distance: f64,
}

/// Distribution summary of a record set: robust location/spread plus a
/// percentile-bootstrap confidence interval for the median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub n: usize,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
    pub iqr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Summarize raw values: median, 10th/90th percentiles, IQR, and a seeded
/// percentile-bootstrap CI of the median with `b_resamples` resamples at
/// level `alpha`.
pub fn summarize_values(
    values: &[f64],
    b_resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<RobustnessSummary, RobustnessError> {
    if values.is_empty() {
        return Err(RobustnessError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RobustnessError::NonFinite { what: "summary values".into() });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = quantile(&sorted, 0.5);
    let p10 = quantile(&sorted, 0.10);
    let p90 = quantile(&sorted, 0.90);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sorted.len();
    let mut boot_medians = Vec::with_capacity(b_resamples);
    let mut resample = vec![0.0; n];
    for _ in 0..b_resamples {
        for slot in resample.iter_mut() {
            *slot = sorted[rng.random_range(0..n)];
        }
        resample.sort_by(|a, b| a.partial_cmp(b).unwrap());
        boot_medians.push(quantile(&resample, 0.5));
    }
    boot_medians.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ci_low = quantile(&boot_medians, alpha / 2.0);
    let ci_high = quantile(&boot_medians, 1.0 - alpha / 2.0);
    Ok(RobustnessSummary { n, median: med, p10, p90, iqr, ci_low, ci_high })
}

/// Summarize the relative distances of a record set.
pub fn summarize(
    records: &[PairedDistanceRecord],
    b_resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<RobustnessSummary, RobustnessError> {
    let values: Vec<f64> = records.iter().map(|r| r.relative_distance).collect();
    summarize_values(&values, b_resamples, alpha, seed)
}

// ── Buckets ─────────────────────────────────────────────────────────────────

/// Coarse uncertainty regime of a noise level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bucket {
    Low,
    Medium,
    High,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Low, Bucket::Medium, Bucket::High];

    pub fn label(&self) -> &'static str {
        match self {
            Bucket::Low => "Low",
            Bucket::Medium => "Medium",
            Bucket::High => "High",
        }
    }
}

/// Split the distinct noise levels into Low/Medium/High terciles of the
/// sorted level list; earlier buckets absorb the remainder when the count
/// isn't divisible by 3, so 11 levels split 4/4/3. Level 0 always lands in
/// Low.
pub fn bucket_uncertainty(levels: &[usize]) -> Result<std::collections::BTreeMap<usize, Bucket>, RobustnessError> {
    let distinct: std::collections::BTreeSet<usize> = levels.iter().copied().collect();
    if distinct.len() < 3 {
        return Err(RobustnessError::TooFewLevels { got: distinct.len() });
    }
    let n = distinct.len();
    let base = n / 3;
    let rem = n % 3;
    let low_size = base + usize::from(rem > 0);
    let med_size = base + usize::from(rem > 1);
    let mut map = std::collections::BTreeMap::new();
    for (i, level) in distinct.into_iter().enumerate() {
        let bucket = if i < low_size {
            Bucket::Low
        } else if i < low_size + med_size {
            Bucket::Medium
        } else {
            Bucket::High
        };
        map.insert(level, bucket);
    }
    Ok(map)
}

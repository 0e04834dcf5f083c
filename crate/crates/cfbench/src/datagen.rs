//! Synthetic data generation and noise injection.
//!
//! Mock datasets are class-conditional Gaussian clusters; categorical
//! features are produced by quantile-binning selected continuous columns into
//! drop-one polytope groups. Noise at level `k` is injected into the *latent*
//! continuous values and re-binned with the stored edges, so categorical
//! noise falls out of the same mechanism as continuous noise.
//!
//! All randomness flows through streams keyed by (seed, level, column, id):
//! the same instance receives the same perturbation no matter how rows are
//! ordered or which worker touches them.

use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    ColumnSpec, DataError, Dataset, FeatureSchema, NoiseKind, NoiseSpec, PolytopeGroup,
};
use crate::robustness::quantile;

/// Errors raised by generation, discretization, and injection.
#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("mock spec violates {what}")]
    BadMockSpec { what: String },
    #[error("column {column} ({name}) has fewer than {n_bins} distinct values; cannot bin")]
    DegenerateBinning { column: usize, name: String, n_bins: usize },
    #[error("column {column} ({name}) belongs to a polytope group and cannot be omitted")]
    UnsupportedOmission { column: usize, name: String },
    #[error("noise spec does not match the injection kind: {what}")]
    WrongInjector { what: String },
    #[error("noise schedule needs at least 2 levels, got {got}")]
    ScheduleTooShort { got: usize },
    #[error("schedule parameter {what} must be finite and non-negative")]
    BadScheduleParam { what: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

// ── Seeded stream derivation ────────────────────────────────────────────────

/// Domain tags keeping unrelated RNG streams apart.
pub const TAG_GENERATE: u64 = 1;
pub const TAG_FEATURE_NOISE: u64 = 2;
pub const TAG_LABEL_FLIP: u64 = 3;
pub const TAG_CATEGORY_CORRUPT: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapse a tuple of stream components into one 64-bit seed.
///
/// Used everywhere a reproducible sub-stream is needed, e.g.
/// `derive_seed(&[base, level, TAG_FEATURE_NOISE, column, id])`.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x51_7C_C1_B7_27_22_0A_95u64;
    for &p in parts {
        h = splitmix64(h ^ p);
        h = splitmix64(h);
    }
    h
}

fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

// ── Mock specification ──────────────────────────────────────────────────────

/// Shape of a synthetic benchmark dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSpec {
    pub n_samples: usize,
    pub n_features: usize,
    /// Leading columns that carry class signal; the rest are pure noise.
    pub n_informative: usize,
    /// Trailing columns discretized into categorical features.
    pub n_categorical: usize,
    /// How many of the categorical columns become multi-category polytopes
    /// (the rest become single binary indicators).
    pub n_polytopes: usize,
    /// Smooth per-row drift of the cluster centers along the sample index.
    pub non_iid: bool,
    /// Marks the dataset for column-omission (epistemic) noise downstream.
    pub missing_variables: bool,
    /// Fraction of samples labelled 1.
    pub class_balance: f64,
    /// Distance between the class-conditional means of informative columns.
    pub class_separation: f64,
    pub seed: u64,
}

impl Default for MockSpec {
    fn default() -> Self {
        MockSpec {
            n_samples: 3000,
            n_features: 2,
            n_informative: 2,
            n_categorical: 0,
            n_polytopes: 0,
            non_iid: false,
            missing_variables: false,
            class_balance: 0.6,
            class_separation: 1.8,
            seed: 0,
        }
    }
}

/// Amplitude of the linear cluster-center drift used when `non_iid` is set.
pub const NON_IID_DRIFT: f64 = 1.0;

impl MockSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |what: String| Err(DatagenError::BadMockSpec { what });
        if self.n_samples < 10 {
            return bad(format!("n_samples >= 10 (got {})", self.n_samples));
        }
        if self.n_features == 0 {
            return bad("n_features >= 1 (got 0)".into());
        }
        if self.n_informative == 0 || self.n_informative > self.n_features {
            return bad(format!(
                "1 <= n_informative <= n_features (got {} of {})",
                self.n_informative, self.n_features
            ));
        }
        if self.n_categorical > self.n_features {
            return bad(format!(
                "n_categorical <= n_features (got {} of {})",
                self.n_categorical, self.n_features
            ));
        }
        if self.n_polytopes > self.n_categorical {
            return bad(format!(
                "n_polytopes <= n_categorical (got {} of {})",
                self.n_polytopes, self.n_categorical
            ));
        }
        if !self.class_balance.is_finite() || self.class_balance <= 0.0 || self.class_balance >= 1.0 {
            return bad(format!("0 < class_balance < 1 (got {})", self.class_balance));
        }
        if !self.class_separation.is_finite() || self.class_separation < 0.0 {
            return bad(format!("class_separation >= 0 (got {})", self.class_separation));
        }
        Ok(())
    }

    /// Indices of the columns that get discretized (the trailing ones).
    pub fn categorical_columns(&self) -> Vec<usize> {
        (self.n_features - self.n_categorical..self.n_features).collect()
    }
}

/// Draw class-conditional Gaussian clusters per the spec. All columns come
/// out continuous; categorical features are made by
/// [`discretize_to_polytopes`] afterwards so their latent values stay
/// available for noise injection.
pub fn make_classification(spec: &MockSpec) -> Result<Dataset, DatagenError> {
    spec.validate()?;
    let n = spec.n_samples;
    let d = spec.n_features;

    let mut setup_rng = stream(&[spec.seed, TAG_GENERATE, u64::MAX, u64::MAX]);
    let n_pos = (spec.class_balance * n as f64).round() as usize;
    let mut y: Vec<u8> = (0..n).map(|i| u8::from(i < n_pos)).collect();
    y.shuffle(&mut setup_rng);
    // Random orientation per informative column keeps the class signal from
    // pointing the same way in every coordinate.
    let signs: Vec<f64> = (0..spec.n_informative)
        .map(|_| if setup_rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();

    let half = spec.class_separation / 2.0;
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let id = i as u64;
        let drift = if spec.non_iid {
            NON_IID_DRIFT * (2.0 * i as f64 / (n - 1) as f64 - 1.0)
        } else {
            0.0
        };
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            let mut rng = stream(&[spec.seed, TAG_GENERATE, j as u64, id]);
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mean = if j < spec.n_informative {
                signs[j] * half * (2.0 * f64::from(y[i]) - 1.0) + drift
            } else {
                0.0
            };
            row.push(mean + noise);
        }
        x.push(row);
    }
    let ids = (0..n as u64).collect();
    Ok(Dataset::new(x, y, ids, FeatureSchema::all_continuous(d))?)
}

// ── Discretization ──────────────────────────────────────────────────────────

/// Frozen binning of one source column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnBinning {
    pub source: String,
    /// Ascending interior edges; a value lands in bin `#edges < value`.
    pub edges: Vec<f64>,
}

/// Reusable mapping from latent continuous columns to indicator groups.
///
/// The edges are computed once (on clean data) and reused on noisy
/// replicas, so noise moves instances between *the same* categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretizer {
    pub bins: Vec<ColumnBinning>,
}

impl ColumnBinning {
    fn bin_of(&self, value: f64) -> usize {
        self.edges.iter().filter(|&&e| value > e).count()
    }
}

impl Discretizer {
    /// Re-encode a dataset containing the latent source columns. The output
    /// schema is identical to the one `discretize_to_polytopes` produced:
    /// untouched columns first (original order), then one drop-one group per
    /// source column.
    pub fn apply(&self, d: &Dataset) -> Result<Dataset, DatagenError> {
        let source_idx: Vec<usize> = self
            .bins
            .iter()
            .map(|b| {
                d.schema
                    .column_index(&b.source)
                    .ok_or_else(|| DatagenError::BadMockSpec { what: format!("missing latent column {}", b.source) })
            })
            .collect::<Result<_, _>>()?;
        let drop: BTreeSet<usize> = source_idx.iter().copied().collect();
        let kept: Vec<usize> = (0..d.d()).filter(|j| !drop.contains(j)).collect();

        let mut columns: Vec<ColumnSpec> = kept.iter().map(|&j| d.schema.columns[j].clone()).collect();
        let mut groups = Vec::new();
        for (g, binning) in self.bins.iter().enumerate() {
            let n_indicators = binning.edges.len();
            let start = columns.len();
            for b in 1..=n_indicators {
                columns.push(ColumnSpec::indicator(format!("{}__bin{b}", binning.source), g));
            }
            groups.push(PolytopeGroup { id: g, columns: (start..start + n_indicators).collect(), drop_one: true });
        }
        let schema = FeatureSchema::new(columns, groups)?;

        let mut x = Vec::with_capacity(d.n());
        for row in &d.x {
            let mut out: Vec<f64> = kept.iter().map(|&j| row[j]).collect();
            for (b, binning) in self.bins.iter().enumerate() {
                let bin = binning.bin_of(row[source_idx[b]]);
                for cat in 1..=binning.edges.len() {
                    out.push(if bin == cat { 1.0 } else { 0.0 });
                }
            }
            x.push(out);
        }
        Ok(Dataset::new(x, d.y.clone(), d.ids.clone(), schema)?)
    }
}

/// Replace the given continuous columns with drop-one indicator groups over
/// `n_bins` quantile bins, returning the encoded dataset and the frozen
/// edges for re-encoding noisy replicas.
pub fn discretize_to_polytopes(
    d: &Dataset,
    columns: &[usize],
    n_bins: usize,
) -> Result<(Dataset, Discretizer), DatagenError> {
    assert!(n_bins >= 2, "n_bins must be at least 2");
    let mut bins = Vec::with_capacity(columns.len());
    for &j in columns {
        let name = d.schema.columns[j].name.clone();
        let mut values: Vec<f64> = d.x.iter().map(|row| row[j]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut distinct = 1;
        for w in values.windows(2) {
            if w[1] > w[0] {
                distinct += 1;
            }
        }
        if distinct < n_bins {
            return Err(DatagenError::DegenerateBinning { column: j, name, n_bins });
        }
        let edges: Vec<f64> = (1..n_bins).map(|k| quantile(&values, k as f64 / n_bins as f64)).collect();
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DatagenError::DegenerateBinning { column: j, name, n_bins });
        }
        bins.push(ColumnBinning { source: name, edges });
    }
    let discretizer = Discretizer { bins };
    let encoded = discretizer.apply(d)?;
    Ok((encoded, discretizer))
}

// ── Noise injection ─────────────────────────────────────────────────────────

fn flip_labels(y: &mut [u8], ids: &[u64], rate: f64, level: usize, seed: u64) {
    if rate <= 0.0 {
        return;
    }
    for (i, label) in y.iter_mut().enumerate() {
        let mut rng = stream(&[seed, level as u64, TAG_LABEL_FLIP, ids[i]]);
        if rng.random::<f64>() < rate {
            *label = 1 - *label;
        }
    }
}

/// Additive Gaussian noise on continuous columns plus independent label
/// flips. Indicator columns, ids, and row order are untouched; with
/// `feature_sigma == 0` and `label_flip_rate == 0` the output is
/// bit-identical to the input.
pub fn inject_aleatoric(d: &Dataset, spec: &NoiseSpec, seed: u64) -> Result<Dataset, DatagenError> {
    spec.validate()?;
    if spec.noise_kind != NoiseKind::Gaussian || !spec.omitted_columns.is_empty() {
        return Err(DatagenError::WrongInjector {
            what: "inject_aleatoric handles gaussian noise without column omission".into(),
        });
    }
    let mut out = d.clone();
    if spec.feature_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.feature_sigma).expect("validated sigma");
        for &j in &d.schema.continuous_indices() {
            for (i, row) in out.x.iter_mut().enumerate() {
                let mut rng = stream(&[seed, spec.level as u64, TAG_FEATURE_NOISE, j as u64, d.ids[i]]);
                row[j] += normal.sample(&mut rng);
            }
        }
    }
    flip_labels(&mut out.y, &d.ids, spec.label_flip_rate, spec.level, seed);
    Ok(out)
}

/// Drop the given columns, rebuilding the schema with remapped group
/// membership. Omitting a column that belongs to a polytope group is
/// unsupported and errors.
pub fn omit_columns(d: &Dataset, omitted: &BTreeSet<usize>) -> Result<Dataset, DatagenError> {
    for &j in omitted {
        if j >= d.d() {
            return Err(DatagenError::BadMockSpec { what: format!("omitted column {j} out of range") });
        }
        if !d.schema.columns[j].is_continuous() {
            return Err(DatagenError::UnsupportedOmission { column: j, name: d.schema.columns[j].name.clone() });
        }
    }
    let kept: Vec<usize> = (0..d.d()).filter(|j| !omitted.contains(j)).collect();
    let remap: std::collections::BTreeMap<usize, usize> =
        kept.iter().enumerate().map(|(new, &old)| (old, new)).collect();
    let columns: Vec<ColumnSpec> = kept.iter().map(|&j| d.schema.columns[j].clone()).collect();
    let groups: Vec<PolytopeGroup> = d
        .schema
        .groups
        .iter()
        .map(|g| PolytopeGroup { id: g.id, columns: g.columns.iter().map(|c| remap[c]).collect(), drop_one: g.drop_one })
        .collect();
    let schema = FeatureSchema::new(columns, groups)?;
    let x = d.x.iter().map(|row| kept.iter().map(|&j| row[j]).collect()).collect();
    Ok(Dataset::new(x, d.y.clone(), d.ids.clone(), schema)?)
}

/// Epistemic-uncertainty injection: heavy-tailed Student-t feature noise
/// (scaled by `feature_sigma`) and/or omission of whole columns. Label flips
/// still apply. At least one of the two epistemic mechanisms must be
/// requested; plain Gaussian noise belongs to [`inject_aleatoric`].
pub fn inject_epistemic(d: &Dataset, spec: &NoiseSpec, seed: u64) -> Result<Dataset, DatagenError> {
    spec.validate()?;
    let is_student = matches!(spec.noise_kind, NoiseKind::StudentT { .. });
    if !is_student && spec.omitted_columns.is_empty() {
        return Err(DatagenError::WrongInjector {
            what: "inject_epistemic needs student_t noise or omitted columns".into(),
        });
    }
    let mut out = d.clone();
    if let NoiseKind::StudentT { df } = spec.noise_kind {
        if spec.feature_sigma > 0.0 {
            let t = StudentT::new(df).map_err(|e| DatagenError::BadScheduleParam { what: format!("df: {e}") })?;
            for &j in &d.schema.continuous_indices() {
                for (i, row) in out.x.iter_mut().enumerate() {
                    let mut rng = stream(&[seed, spec.level as u64, TAG_FEATURE_NOISE, j as u64, d.ids[i]]);
                    row[j] += spec.feature_sigma * t.sample(&mut rng);
                }
            }
        }
    }
    flip_labels(&mut out.y, &d.ids, spec.label_flip_rate, spec.level, seed);
    if spec.omitted_columns.is_empty() {
        Ok(out)
    } else {
        omit_columns(&out, &spec.omitted_columns)
    }
}

/// Categorical corruption for datasets whose categories have no latent
/// continuous source (real data): with probability `rate`, an instance's
/// category in a group is resampled uniformly.
pub fn corrupt_categoricals(d: &Dataset, rate: f64, level: usize, seed: u64) -> Result<Dataset, DatagenError> {
    if !(0.0..=1.0).contains(&rate) || !rate.is_finite() {
        return Err(DatagenError::BadScheduleParam { what: format!("corruption rate {rate}") });
    }
    let mut out = d.clone();
    if rate <= 0.0 {
        return Ok(out);
    }
    for group in &d.schema.groups {
        for i in 0..d.n() {
            let mut rng = stream(&[seed, level as u64, TAG_CATEGORY_CORRUPT, group.id as u64, d.ids[i]]);
            if rng.random::<f64>() < rate {
                let cat = rng.random_range(0..group.n_categories());
                out.schema.encode_category(group.id, cat, &mut out.x[i])?;
            }
        }
    }
    Ok(out)
}

/// Linear noise schedule: level `t` of `n_levels` gets
/// `sigma = max_sigma * t / (n_levels - 1)` and the same ramp for the label
/// flip rate. Level 0 is always clean.
pub fn build_noise_schedule(n_levels: usize, max_sigma: f64, max_flip: f64) -> Result<Vec<NoiseSpec>, DatagenError> {
    if n_levels < 2 {
        return Err(DatagenError::ScheduleTooShort { got: n_levels });
    }
    if !max_sigma.is_finite() || max_sigma < 0.0 {
        return Err(DatagenError::BadScheduleParam { what: format!("max_sigma={max_sigma}") });
    }
    if !max_flip.is_finite() || !(0.0..=1.0).contains(&max_flip) {
        return Err(DatagenError::BadScheduleParam { what: format!("max_flip={max_flip}") });
    }
    let denom = (n_levels - 1) as f64;
    Ok((0..n_levels)
        .map(|t| NoiseSpec {
            level: t,
            feature_sigma: max_sigma * t as f64 / denom,
            label_flip_rate: max_flip * t as f64 / denom,
            noise_kind: NoiseKind::Gaussian,
            omitted_columns: BTreeSet::new(),
        })
        .collect())
}

// ── Mock pipeline ───────────────────────────────────────────────────────────

/// A generated mock dataset: the latent all-continuous draw, the encoded
/// (level-0) dataset, and the frozen discretizer when categories exist.
#[derive(Debug, Clone)]
pub struct MockData {
    pub spec: MockSpec,
    pub latent: Dataset,
    pub encoded: Dataset,
    pub discretizer: Option<Discretizer>,
}

/// Default quantile bins per polytope column.
pub const DEFAULT_POLYTOPE_BINS: usize = 4;

/// Generate a mock dataset and encode its categorical columns. The first
/// `n_polytopes` categorical columns get `n_bins` bins (real polytopes), the
/// rest get 2 (binary indicators).
pub fn build_mock(spec: &MockSpec, n_bins: usize) -> Result<MockData, DatagenError> {
    let latent = make_classification(spec)?;
    if spec.n_categorical == 0 {
        return Ok(MockData { spec: spec.clone(), latent: latent.clone(), encoded: latent, discretizer: None });
    }
    let cat_cols = spec.categorical_columns();
    let (poly_cols, binary_cols) = cat_cols.split_at(spec.n_polytopes);
    // Two passes share one Discretizer so group ids stay in column order.
    let mut bins = Vec::new();
    if !poly_cols.is_empty() {
        let (_, disc) = discretize_to_polytopes(&latent, poly_cols, n_bins)?;
        bins.extend(disc.bins);
    }
    if !binary_cols.is_empty() {
        let (_, disc) = discretize_to_polytopes(&latent, binary_cols, 2)?;
        bins.extend(disc.bins);
    }
    let discretizer = Discretizer { bins };
    let encoded = discretizer.apply(&latent)?;
    Ok(MockData { spec: spec.clone(), latent, encoded, discretizer: Some(discretizer) })
}

/// Produce the dataset for one noise level of a mock: noise goes into the
/// latent continuous values, categories are re-encoded with the frozen
/// edges, and any requested column omission is applied to the encoded schema.
pub fn mock_level_dataset(mock: &MockData, spec: &NoiseSpec, seed: u64) -> Result<Dataset, DatagenError> {
    let mut latent_spec = spec.clone();
    latent_spec.omitted_columns = BTreeSet::new();
    let noisy_latent = match latent_spec.noise_kind {
        NoiseKind::Gaussian => inject_aleatoric(&mock.latent, &latent_spec, seed)?,
        NoiseKind::StudentT { .. } => inject_epistemic(&mock.latent, &latent_spec, seed)?,
    };
    let encoded = match &mock.discretizer {
        Some(disc) => disc.apply(&noisy_latent)?,
        None => noisy_latent,
    };
    if spec.omitted_columns.is_empty() {
        Ok(encoded)
    } else {
        Ok(omit_columns(&encoded, &spec.omitted_columns)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;

    fn small_spec() -> MockSpec {
        MockSpec { n_samples: 3000, n_features: 4, n_informative: 3, seed: 7, ..MockSpec::default() }
    }

    #[test]
    fn mock_spec_validation_names_the_bound() {
        let spec = MockSpec { n_informative: 5, n_features: 4, ..MockSpec::default() };
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("n_informative"), "{err}");
    }

    #[test]
    fn make_classification_is_deterministic_and_balanced() {
        let spec = small_spec();
        let a = make_classification(&spec).unwrap();
        let b = make_classification(&spec).unwrap();
        assert_eq!(a, b);
        let frac = a.y.iter().map(|&v| f64::from(v)).sum::<f64>() / a.n() as f64;
        assert!((frac - 0.6).abs() < 0.03, "label fraction {frac}");
        assert!(validate_dataset(&a).is_clean());
    }

    #[test]
    fn separable_limit_pushes_classes_apart() {
        let spec = MockSpec { class_separation: 10.0, ..small_spec() };
        let d = make_classification(&spec).unwrap();
        // With sep = 10 the informative coordinates alone split the classes:
        // project on the class-mean difference and check sides.
        let mut mean1 = vec![0.0; d.d()];
        let mut mean0 = vec![0.0; d.d()];
        let (mut n1, mut n0) = (0.0, 0.0);
        for i in 0..d.n() {
            let target = if d.y[i] == 1 { (&mut mean1, &mut n1) } else { (&mut mean0, &mut n0) };
            for j in 0..d.d() {
                target.0[j] += d.x[i][j];
            }
            *target.1 += 1.0;
        }
        for j in 0..d.d() {
            mean1[j] /= n1;
            mean0[j] /= n0;
        }
        let misclassified = (0..d.n())
            .filter(|&i| {
                let score: f64 = (0..d.d()).map(|j| d.x[i][j] * (mean1[j] - mean0[j])).sum();
                let mid: f64 = (0..d.d()).map(|j| (mean1[j] + mean0[j]) / 2.0 * (mean1[j] - mean0[j])).sum();
                (score > mid) != (d.y[i] == 1)
            })
            .count();
        assert_eq!(misclassified, 0);
    }

    #[test]
    fn non_iid_drift_shifts_early_vs_late_rows() {
        let spec = MockSpec { non_iid: true, n_samples: 4000, ..small_spec() };
        let d = make_classification(&spec).unwrap();
        let early: f64 = d.x[..500].iter().map(|r| r[0]).sum::<f64>() / 500.0;
        let late: f64 = d.x[3500..].iter().map(|r| r[0]).sum::<f64>() / 500.0;
        assert!(late - early > 1.0, "drift should separate ends: early {early}, late {late}");
    }

    #[test]
    fn zero_sigma_zero_flip_is_bit_identical() {
        let d = make_classification(&small_spec()).unwrap();
        let noisy = inject_aleatoric(&d, &NoiseSpec::clean(), 99).unwrap();
        assert_eq!(d, noisy);
    }

    #[test]
    fn unit_sigma_noise_has_unit_variance() {
        let d = make_classification(&small_spec()).unwrap();
        let spec = NoiseSpec { level: 1, feature_sigma: 1.0, ..NoiseSpec::clean() };
        let noisy = inject_aleatoric(&d, &spec, 5).unwrap();
        let diffs: Vec<f64> = (0..d.n()).map(|i| noisy.x[i][0] - d.x[i][0]).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        assert!((0.9..=1.1).contains(&var), "sample variance {var}");
    }

    #[test]
    fn full_flip_rate_negates_every_label() {
        let d = make_classification(&small_spec()).unwrap();
        let spec = NoiseSpec { level: 2, label_flip_rate: 1.0, ..NoiseSpec::clean() };
        let noisy = inject_aleatoric(&d, &spec, 5).unwrap();
        for i in 0..d.n() {
            assert_eq!(noisy.y[i], 1 - d.y[i]);
        }
    }

    #[test]
    fn injection_preserves_ids_and_rows() {
        let d = make_classification(&small_spec()).unwrap();
        let spec = NoiseSpec { level: 3, feature_sigma: 2.5, label_flip_rate: 0.2, ..NoiseSpec::clean() };
        let noisy = inject_aleatoric(&d, &spec, 5).unwrap();
        assert_eq!(noisy.ids, d.ids);
        assert_eq!(noisy.n(), d.n());
        assert_eq!(noisy.schema, d.schema);
    }

    #[test]
    fn median_split_indicator_tracks_the_median() {
        let d = make_classification(&small_spec()).unwrap();
        let (enc, disc) = discretize_to_polytopes(&d, &[1], 2).unwrap();
        let mut vals: Vec<f64> = d.x.iter().map(|r| r[1]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = quantile(&vals, 0.5);
        assert_eq!(disc.bins[0].edges, vec![median]);
        let ind_col = enc.schema.column_index("f1__bin1").unwrap();
        for i in 0..d.n() {
            let expect = if d.x[i][1] > median { 1.0 } else { 0.0 };
            assert_eq!(enc.x[i][ind_col], expect, "row {i}");
        }
    }

    #[test]
    fn quantile_bins_split_mass_evenly() {
        // Uniform-ish column, 4 bins: each of the 3 indicator columns should
        // carry about a quarter of the rows.
        let d = make_classification(&MockSpec { n_samples: 4000, ..small_spec() }).unwrap();
        let (enc, _) = discretize_to_polytopes(&d, &[0], 4).unwrap();
        for b in 1..=3 {
            let col = enc.schema.column_index(&format!("f0__bin{b}")).unwrap();
            let frac = enc.x.iter().map(|r| r[col]).sum::<f64>() / enc.n() as f64;
            assert!((frac - 0.25).abs() < 0.02, "bin {b} fraction {frac}");
        }
        assert!(validate_dataset(&enc).is_clean());
    }

    #[test]
    fn discretize_rejects_near_constant_column() {
        let schema = FeatureSchema::all_continuous(1);
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![if i < 50 { 0.0 } else { 1.0 }]).collect();
        let d = Dataset::new(x, vec![0; 100], (0..100).collect(), schema).unwrap();
        let err = discretize_to_polytopes(&d, &[0], 4).unwrap_err();
        assert!(matches!(err, DatagenError::DegenerateBinning { column: 0, .. }), "{err}");
    }

    #[test]
    fn reapplied_discretizer_matches_original_encoding() {
        let d = make_classification(&small_spec()).unwrap();
        let (enc, disc) = discretize_to_polytopes(&d, &[2, 3], 4).unwrap();
        let again = disc.apply(&d).unwrap();
        assert_eq!(enc, again);
        assert_eq!(enc.schema.groups.len(), 2);
    }

    #[test]
    fn student_t_high_df_looks_gaussian_in_kurtosis() {
        let d = make_classification(&MockSpec { n_samples: 20000, n_features: 1, n_informative: 1, ..small_spec() })
            .unwrap();
        let spec = NoiseSpec {
            level: 1,
            feature_sigma: 1.0,
            noise_kind: NoiseKind::StudentT { df: 1000.0 },
            ..NoiseSpec::clean()
        };
        let noisy = inject_epistemic(&d, &spec, 3).unwrap();
        let diffs: Vec<f64> = (0..d.n()).map(|i| noisy.x[i][0] - d.x[i][0]).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let m2 = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
        let m4 = diffs.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / diffs.len() as f64;
        let kurtosis = m4 / (m2 * m2);
        assert!((kurtosis - 3.0).abs() < 0.2, "kurtosis {kurtosis}");
    }

    #[test]
    fn omission_drops_the_column_and_its_schema_entry() {
        let spec = MockSpec { n_features: 7, n_informative: 7, ..small_spec() };
        let d = make_classification(&spec).unwrap();
        let noise = NoiseSpec { level: 1, omitted_columns: BTreeSet::from([2]), ..NoiseSpec::clean() };
        let out = inject_epistemic(&d, &noise, 1).unwrap();
        assert_eq!(out.d(), 6);
        assert!(out.schema.column_index("f2").is_none());
        assert_eq!(out.ids, d.ids);
    }

    #[test]
    fn omitting_grouped_column_is_rejected() {
        let d = make_classification(&small_spec()).unwrap();
        let (enc, _) = discretize_to_polytopes(&d, &[3], 4).unwrap();
        let grouped_col = enc.schema.groups[0].columns[0];
        let err = omit_columns(&enc, &BTreeSet::from([grouped_col])).unwrap_err();
        assert!(matches!(err, DatagenError::UnsupportedOmission { .. }), "{err}");
    }

    #[test]
    fn schedule_is_linear_with_clean_baseline() {
        let schedule = build_noise_schedule(11, 2.0, 0.3).unwrap();
        assert_eq!(schedule.len(), 11);
        assert_eq!(schedule[0].feature_sigma, 0.0);
        assert_eq!(schedule[0].label_flip_rate, 0.0);
        assert!((schedule[5].feature_sigma - 1.0).abs() < 1e-12);
        assert!((schedule[5].label_flip_rate - 0.15).abs() < 1e-12);
        assert!((schedule[10].feature_sigma - 2.0).abs() < 1e-12);
        for spec in &schedule {
            spec.validate().unwrap();
        }
    }

    #[test]
    fn schedule_rejects_single_level() {
        assert!(matches!(build_noise_schedule(1, 1.0, 0.1), Err(DatagenError::ScheduleTooShort { got: 1 })));
    }

    #[test]
    fn corrupting_categories_keeps_rows_valid() {
        let d = make_classification(&small_spec()).unwrap();
        let (enc, _) = discretize_to_polytopes(&d, &[2, 3], 4).unwrap();
        let corrupted = corrupt_categoricals(&enc, 0.5, 1, 11).unwrap();
        assert!(validate_dataset(&corrupted).is_clean());
        let changed = (0..enc.n()).filter(|&i| corrupted.x[i] != enc.x[i]).count();
        // Roughly half the rows should have at least one group resampled
        // (resampling may redraw the same category, so well under 100%).
        assert!(changed > enc.n() / 4, "changed {changed}");
        assert_eq!(corrupt_categoricals(&enc, 0.0, 1, 11).unwrap(), enc);
    }

    #[test]
    fn mock_level_zero_equals_encoded_baseline() {
        let spec = MockSpec { n_features: 10, n_informative: 10, n_categorical: 5, n_polytopes: 2, ..small_spec() };
        let mock = build_mock(&spec, DEFAULT_POLYTOPE_BINS).unwrap();
        assert_eq!(mock.encoded.d(), 5 + 2 * 3 + 3); // 5 continuous, 2 polytopes of 3 indicators, 3 binaries
        assert_eq!(mock.encoded.schema.groups.len(), 5);
        let level0 = mock_level_dataset(&mock, &NoiseSpec::clean(), spec.seed).unwrap();
        assert_eq!(level0, mock.encoded);
        let noisy = mock_level_dataset(
            &mock,
            &NoiseSpec { level: 4, feature_sigma: 2.0, label_flip_rate: 0.3, ..NoiseSpec::clean() },
            spec.seed,
        )
        .unwrap();
        assert!(validate_dataset(&noisy).is_clean());
        assert_ne!(noisy, mock.encoded);
    }

    #[test]
    fn derived_seeds_differ_across_components() {
        let a = derive_seed(&[1, 2, 3, 4]);
        let b = derive_seed(&[1, 2, 3, 5]);
        let c = derive_seed(&[1, 2, 4, 3]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }
}

//! Core tabular data model: feature schemas with polytope (one-hot) groups,
//! datasets with stable instance ids, noise-level descriptors, and the
//! weighted-L1 weight vector shared by every distance computation.
//!
//! Instance ids are the backbone of the whole benchmark: noise is injected
//! onto fixed base instances, so the same id refers to the same underlying
//! individual at every noise level and pairing across levels is well defined.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for deciding that an indicator entry is exactly 0 or 1.
pub const INDICATOR_TOL: f64 = 1e-9;

/// Errors raised by schema and dataset construction or serialization.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("column {column} ({name}) declares group {group} but the group does not list it")]
    GroupMembershipMismatch { column: usize, name: String, group: usize },
    #[error("column {column} ({name}) appears in more than one polytope group")]
    OverlappingGroups { column: usize, name: String },
    #[error("group {group} references column {column} which is out of range or not categorical")]
    BadGroupColumn { group: usize, column: usize },
    #[error("column {column} ({name}) has invalid bounds: lower {lo} >= upper {hi}")]
    InvalidBounds { column: usize, name: String, lo: f64, hi: f64 },
    #[error("duplicate column name {name}")]
    DuplicateColumnName { name: String },
    #[error("duplicate instance id {id}")]
    DuplicateId { id: u64 },
    #[error("row {row} has {got} values but the schema has {expected} columns")]
    DimensionMismatch { row: usize, got: usize, expected: usize },
    #[error("length mismatch: {rows} rows, {labels} labels, {ids} ids")]
    LengthMismatch { rows: usize, labels: usize, ids: usize },
    #[error("group {group} has no category at index {category}")]
    BadCategory { group: usize, category: usize },
    #[error("row does not encode a valid category for group {group}")]
    UndecodableCategory { group: usize },
    #[error("noise level 0 must be clean but has sigma={sigma}, flip={flip}, {omitted} omitted columns")]
    DirtyBaseline { sigma: f64, flip: f64, omitted: usize },
    #[error("noise spec has non-finite or negative parameter {what}")]
    BadNoiseParam { what: String },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

// ── Schema ──────────────────────────────────────────────────────────────────

/// What a single matrix column holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    /// Real-valued feature, optionally box-bounded for counterfactual search.
    Continuous { bounds: Option<(f64, f64)> },
    /// 0/1 indicator belonging to the polytope group with this id.
    CategoricalIndicator { group: usize },
}

/// A named column together with its kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        ColumnSpec { name: name.into(), kind: ColumnKind::Continuous { bounds: None } }
    }

    pub fn bounded(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        ColumnSpec { name: name.into(), kind: ColumnKind::Continuous { bounds: Some((lo, hi)) } }
    }

    pub fn indicator(name: impl Into<String>, group: usize) -> Self {
        ColumnSpec { name: name.into(), kind: ColumnKind::CategoricalIndicator { group } }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, ColumnKind::Continuous { .. })
    }
}

/// One-hot group over a set of indicator columns.
///
/// With `drop_one = true` the row sum may be 0 or 1 (the all-zeros pattern is
/// the dropped reference category), otherwise it must be exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeGroup {
    pub id: usize,
    pub columns: Vec<usize>,
    pub drop_one: bool,
}

impl PolytopeGroup {
    /// Number of distinct categories the group encodes.
    pub fn n_categories(&self) -> usize {
        self.columns.len() + usize::from(self.drop_one)
    }
}

/// Ordered feature columns plus the polytope groups over the indicator ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSpec>,
    pub groups: Vec<PolytopeGroup>,
}

impl FeatureSchema {
    /// Build a schema, checking the structural invariants: group ids are the
    /// positions in `groups`, every indicator column belongs to exactly the
    /// group it names, groups are disjoint, names are unique, bounds ordered.
    pub fn new(columns: Vec<ColumnSpec>, groups: Vec<PolytopeGroup>) -> Result<Self, DataError> {
        let mut seen_names = BTreeSet::new();
        for (j, col) in columns.iter().enumerate() {
            if !seen_names.insert(col.name.clone()) {
                return Err(DataError::DuplicateColumnName { name: col.name.clone() });
            }
            if let ColumnKind::Continuous { bounds: Some((lo, hi)) } = col.kind {
                if !(lo < hi) {
                    return Err(DataError::InvalidBounds { column: j, name: col.name.clone(), lo, hi });
                }
            }
        }
        let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
        for (gid, group) in groups.iter().enumerate() {
            if group.id != gid {
                return Err(DataError::BadGroupColumn { group: group.id, column: usize::MAX });
            }
            for &c in &group.columns {
                let is_indicator = matches!(
                    columns.get(c).map(|s| &s.kind),
                    Some(ColumnKind::CategoricalIndicator { group }) if *group == gid
                );
                if !is_indicator {
                    return Err(DataError::BadGroupColumn { group: gid, column: c });
                }
                if owner.insert(c, gid).is_some() {
                    return Err(DataError::OverlappingGroups { column: c, name: columns[c].name.clone() });
                }
            }
        }
        for (j, col) in columns.iter().enumerate() {
            if let ColumnKind::CategoricalIndicator { group } = col.kind {
                if !groups.get(group).map(|g| g.columns.contains(&j)).unwrap_or(false) {
                    return Err(DataError::GroupMembershipMismatch { column: j, name: col.name.clone(), group });
                }
            }
        }
        Ok(FeatureSchema { columns, groups })
    }

    /// Schema with only unbounded continuous columns named `f0..f{d-1}`.
    pub fn all_continuous(d: usize) -> Self {
        let columns = (0..d).map(|j| ColumnSpec::continuous(format!("f{j}"))).collect();
        FeatureSchema { columns, groups: Vec::new() }
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn continuous_indices(&self) -> Vec<usize> {
        (0..self.columns.len()).filter(|&j| self.columns[j].is_continuous()).collect()
    }

    pub fn categorical_indices(&self) -> Vec<usize> {
        (0..self.columns.len()).filter(|&j| !self.columns[j].is_continuous()).collect()
    }

    /// Box bounds of a continuous column (`None` for indicators).
    pub fn bounds(&self, j: usize) -> Option<(f64, f64)> {
        match self.columns[j].kind {
            ColumnKind::Continuous { bounds } => bounds,
            ColumnKind::CategoricalIndicator { .. } => None,
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Write the indicator pattern for `category` of `group` into `row`.
    ///
    /// Category 0 of a drop-one group is the all-zeros reference pattern;
    /// category `i >= 1` sets the group's `i-1`-th column. Full groups map
    /// category `i` to their `i`-th column.
    pub fn encode_category(&self, group: usize, category: usize, row: &mut [f64]) -> Result<(), DataError> {
        let g = self.groups.get(group).ok_or(DataError::BadCategory { group, category })?;
        if category >= g.n_categories() {
            return Err(DataError::BadCategory { group, category });
        }
        for &c in &g.columns {
            row[c] = 0.0;
        }
        let offset = usize::from(g.drop_one);
        if category >= offset {
            row[g.columns[category - offset]] = 1.0;
        }
        Ok(())
    }

    /// Read a category index back out of a row (inverse of [`encode_category`]).
    pub fn decode_category(&self, group: usize, row: &[f64]) -> Result<usize, DataError> {
        let g = self.groups.get(group).ok_or(DataError::UndecodableCategory { group })?;
        let mut set = None;
        for (pos, &c) in g.columns.iter().enumerate() {
            let v = row[c];
            if (v - 1.0).abs() <= INDICATOR_TOL {
                if set.is_some() {
                    return Err(DataError::UndecodableCategory { group });
                }
                set = Some(pos);
            } else if v.abs() > INDICATOR_TOL {
                return Err(DataError::UndecodableCategory { group });
            }
        }
        let offset = usize::from(g.drop_one);
        match set {
            Some(pos) => Ok(pos + offset),
            None if g.drop_one => Ok(0),
            None => Err(DataError::UndecodableCategory { group }),
        }
    }
}

// ── Dataset ─────────────────────────────────────────────────────────────────

/// A labelled tabular dataset: row-major feature matrix, 0/1 labels, stable
/// instance ids, and the schema describing the columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    pub ids: Vec<u64>,
    pub schema: FeatureSchema,
}

impl Dataset {
    /// Build a dataset, enforcing the cheap structural invariants (matching
    /// lengths, row widths, unique ids). Value-level checks — binary
    /// indicators, polytope row sums — live in [`validate_dataset`], which
    /// reports rather than fails.
    pub fn new(
        x: Vec<Vec<f64>>,
        y: Vec<u8>,
        ids: Vec<u64>,
        schema: FeatureSchema,
    ) -> Result<Self, DataError> {
        if x.len() != y.len() || x.len() != ids.len() {
            return Err(DataError::LengthMismatch { rows: x.len(), labels: y.len(), ids: ids.len() });
        }
        let d = schema.n_columns();
        for (i, row) in x.iter().enumerate() {
            if row.len() != d {
                return Err(DataError::DimensionMismatch { row: i, got: row.len(), expected: d });
            }
        }
        let mut seen = BTreeSet::new();
        for &id in &ids {
            if !seen.insert(id) {
                return Err(DataError::DuplicateId { id });
            }
        }
        Ok(Dataset { x, y, ids, schema })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn d(&self) -> usize {
        self.schema.n_columns()
    }

    /// Subset of rows by position, keeping ids and labels aligned.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: rows.iter().map(|&i| self.x[i].clone()).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
            schema: self.schema.clone(),
        }
    }

    /// Row position of an instance id, if present.
    pub fn row_of_id(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&i| i == id)
    }
}

// ── Validation ──────────────────────────────────────────────────────────────

/// A single constraint violation found while validating a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ValidationIssue {
    NonBinaryIndicator { row: usize, column: usize, name: String, value: f64 },
    GroupSumViolation { row: usize, group: usize, sum: f64 },
    NonFiniteValue { row: usize, column: usize, name: String },
    LabelOutOfRange { row: usize, value: u8 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::NonBinaryIndicator { row, column, name, value } => {
                write!(f, "row {row}: indicator column {column} ({name}) holds non-binary value {value}")
            }
            ValidationIssue::GroupSumViolation { row, group, sum } => {
                write!(f, "row {row}: polytope group {group} sums to {sum}")
            }
            ValidationIssue::NonFiniteValue { row, column, name } => {
                write!(f, "row {row}: column {column} ({name}) is not finite")
            }
            ValidationIssue::LabelOutOfRange { row, value } => {
                write!(f, "row {row}: label {value} is not 0/1")
            }
        }
    }
}

/// Everything [`validate_dataset`] found; empty means the dataset is clean.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Check one feature row against the schema's value-level constraints:
/// finite entries, binary indicators, and polytope row sums.
pub fn validate_row(schema: &FeatureSchema, row_idx: usize, row: &[f64]) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    for (j, col) in schema.columns.iter().enumerate() {
        let v = row[j];
        if !v.is_finite() {
            issues.push(ValidationIssue::NonFiniteValue { row: row_idx, column: j, name: col.name.clone() });
            continue;
        }
        if let ColumnKind::CategoricalIndicator { .. } = col.kind {
            if v.abs() > INDICATOR_TOL && (v - 1.0).abs() > INDICATOR_TOL {
                issues.push(ValidationIssue::NonBinaryIndicator {
                    row: row_idx,
                    column: j,
                    name: col.name.clone(),
                    value: v,
                });
            }
        }
    }
    for group in &schema.groups {
        let sum: f64 = group.columns.iter().map(|&c| row[c]).sum();
        let ok = if group.drop_one {
            sum.abs() <= INDICATOR_TOL || (sum - 1.0).abs() <= INDICATOR_TOL
        } else {
            (sum - 1.0).abs() <= INDICATOR_TOL
        };
        if !ok {
            issues.push(ValidationIssue::GroupSumViolation { row: row_idx, group: group.id, sum });
        }
    }
    issues
}

/// Validate every row and label of a dataset. Violations are collected into
/// a report — this never fails, so callers can decide what is fatal.
pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (i, row) in d.x.iter().enumerate() {
        report.issues.extend(validate_row(&d.schema, i, row));
        if d.y[i] > 1 {
            report.issues.push(ValidationIssue::LabelOutOfRange { row: i, value: d.y[i] });
        }
    }
    report
}

// ── Pairing ─────────────────────────────────────────────────────────────────

/// Anything that can be paired across noise levels by instance id.
pub trait Pairable {
    fn pair_id(&self) -> u64;
    fn pair_valid(&self) -> bool;
}

/// Match baseline and noisy items by id, keeping only ids where both sides
/// are present and valid. Output is sorted by id, so pairing is
/// deterministic regardless of input order.
pub fn pair_instances<'a, T: Pairable>(
    base: &'a [T],
    noisy: &'a [T],
) -> Result<Vec<(u64, &'a T, &'a T)>, DataError> {
    let mut base_by_id: BTreeMap<u64, &T> = BTreeMap::new();
    for item in base {
        if base_by_id.insert(item.pair_id(), item).is_some() {
            return Err(DataError::DuplicateId { id: item.pair_id() });
        }
    }
    let mut noisy_by_id: BTreeMap<u64, &T> = BTreeMap::new();
    for item in noisy {
        if noisy_by_id.insert(item.pair_id(), item).is_some() {
            return Err(DataError::DuplicateId { id: item.pair_id() });
        }
    }
    let mut pairs = Vec::new();
    for (id, b) in &base_by_id {
        if let Some(n) = noisy_by_id.get(id) {
            if b.pair_valid() && n.pair_valid() {
                pairs.push((*id, *b, *n));
            }
        }
    }
    Ok(pairs)
}

// ── Noise spec ──────────────────────────────────────────────────────────────

/// Distribution family for feature noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseKind {
    Gaussian,
    /// Heavy-tailed Student-t noise with the given degrees of freedom.
    StudentT { df: f64 },
}

/// Description of one noise level in a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub level: usize,
    pub feature_sigma: f64,
    pub label_flip_rate: f64,
    pub noise_kind: NoiseKind,
    /// Column indices removed entirely (epistemic uncertainty).
    pub omitted_columns: BTreeSet<usize>,
}

impl NoiseSpec {
    /// The clean baseline spec for level 0.
    pub fn clean() -> Self {
        NoiseSpec {
            level: 0,
            feature_sigma: 0.0,
            label_flip_rate: 0.0,
            noise_kind: NoiseKind::Gaussian,
            omitted_columns: BTreeSet::new(),
        }
    }

    /// Enforce parameter sanity plus the level-0-is-clean invariant.
    pub fn validate(&self) -> Result<(), DataError> {
        if !self.feature_sigma.is_finite() || self.feature_sigma < 0.0 {
            return Err(DataError::BadNoiseParam { what: format!("feature_sigma={}", self.feature_sigma) });
        }
        if !self.label_flip_rate.is_finite() || !(0.0..=1.0).contains(&self.label_flip_rate) {
            return Err(DataError::BadNoiseParam { what: format!("label_flip_rate={}", self.label_flip_rate) });
        }
        if let NoiseKind::StudentT { df } = self.noise_kind {
            if !df.is_finite() || df <= 0.0 {
                return Err(DataError::BadNoiseParam { what: format!("student_t df={df}") });
            }
        }
        if self.level == 0
            && (self.feature_sigma != 0.0 || self.label_flip_rate != 0.0 || !self.omitted_columns.is_empty())
        {
            return Err(DataError::DirtyBaseline {
                sigma: self.feature_sigma,
                flip: self.label_flip_rate,
                omitted: self.omitted_columns.len(),
            });
        }
        Ok(())
    }
}

// ── Weights ─────────────────────────────────────────────────────────────────

/// Per-column weights for the weighted-L1 metric, estimated once on the
/// clean training split and then shared by every distance computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
    /// Identifier of the split the weights were estimated on.
    pub reference_split_id: String,
}

impl WeightVector {
    /// Unit weights, handy for tests and unweighted distances.
    pub fn ones(d: usize) -> Self {
        WeightVector { w: vec![1.0; d], reference_split_id: "unit".into() }
    }
}

// ── Serialization ───────────────────────────────────────────────────────────

/// Reserved trailing CSV column holding the label.
pub const LABEL_COLUMN: &str = "__label";
/// Reserved trailing CSV column holding the instance id.
pub const ID_COLUMN: &str = "__id";

/// Write the dataset as CSV: feature columns in schema order, then
/// `__label` and `__id`.
pub fn write_dataset_csv(d: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| DataError::Csv(e.to_string()))?;
    let mut header: Vec<String> = d.schema.columns.iter().map(|c| c.name.clone()).collect();
    header.push(LABEL_COLUMN.into());
    header.push(ID_COLUMN.into());
    writer.write_record(&header).map_err(|e| DataError::Csv(e.to_string()))?;
    for i in 0..d.n() {
        let mut record: Vec<String> = d.x[i].iter().map(|v| format!("{v}")).collect();
        record.push(format!("{}", d.y[i]));
        record.push(format!("{}", d.ids[i]));
        writer.write_record(&record).map_err(|e| DataError::Csv(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a dataset written by [`write_dataset_csv`], reattaching the schema.
pub fn read_dataset_csv(path: &Path, schema: FeatureSchema) -> Result<Dataset, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| DataError::Csv(e.to_string()))?;
    let headers = reader.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
    let d = schema.n_columns();
    if headers.len() != d + 2 || &headers[d] != LABEL_COLUMN || &headers[d + 1] != ID_COLUMN {
        return Err(DataError::Csv(format!(
            "header does not match schema: expected {d} feature columns plus {LABEL_COLUMN},{ID_COLUMN}"
        )));
    }
    for (j, col) in schema.columns.iter().enumerate() {
        if headers[j] != col.name {
            return Err(DataError::Csv(format!(
                "header column {j} is {} but the schema expects {}",
                &headers[j], col.name
            )));
        }
    }
    let (mut x, mut y, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        let parse = |field: &str, what: &str| -> Result<f64, DataError> {
            field.parse::<f64>().map_err(|_| DataError::Csv(format!("row {i}: cannot parse {what} value {field:?}")))
        };
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            row.push(parse(&record[j], &schema.columns[j].name)?);
        }
        x.push(row);
        y.push(
            record[d]
                .parse::<u8>()
                .map_err(|_| DataError::Csv(format!("row {i}: bad label {:?}", &record[d])))?,
        );
        ids.push(
            record[d + 1]
                .parse::<u64>()
                .map_err(|_| DataError::Csv(format!("row {i}: bad id {:?}", &record[d + 1])))?,
        );
    }
    Dataset::new(x, y, ids, schema)
}

/// Serialize a schema to pretty JSON.
pub fn schema_to_json(schema: &FeatureSchema) -> Result<String, DataError> {
    Ok(serde_json::to_string_pretty(schema)?)
}

/// Parse a schema from JSON produced by [`schema_to_json`].
pub fn schema_from_json(json: &str) -> Result<FeatureSchema, DataError> {
    let schema: FeatureSchema = serde_json::from_str(json)?;
    FeatureSchema::new(schema.columns, schema.groups)
}

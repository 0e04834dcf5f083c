//! Loading and preprocessing of real-world CSV datasets into the core
//! [`Dataset`] model: typed CSV parsing, seeded subsampling, rare-category
//! merging, full one-hot encoding, median imputation, and z-scoring, plus a
//! seeded stratified train/test split.
//!
//! Conventions for missing data: a cell that is empty (after trimming) or
//! equal to `?` or `NA` counts as missing. Rows with a missing target are
//! dropped; a missing categorical value becomes its own `__missing`
//! category; a missing continuous value is imputed with the column median
//! over the retained rows.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::{ColumnSpec, DataError, Dataset, FeatureSchema, PolytopeGroup};
use crate::datagen::derive_seed;

use thiserror::Error;

/// Seed-stream tag for the subsampling shuffle.
const SUBSAMPLE_TAG: u64 = 8;
/// Seed-stream tag for the per-class split shuffles.
const SPLIT_TAG: u64 = 7;

/// Category name assigned to missing categorical cells.
pub const MISSING_CATEGORY: &str = "__missing";
/// Category name that rare categories are merged into.
pub const OTHER_CATEGORY: &str = "__other";

/// Errors from CSV ingestion and preprocessing.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("invalid config: {what}")]
    BadConfig { what: String },
    #[error("target column {name:?} not found in header")]
    MissingTargetColumn { name: String },
    #[error("categorical column {name:?} not found in header")]
    UnknownCategoricalColumn { name: String },
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    UnparseableNumber { row: usize, column: String, value: String },
    #[error("no rows left after dropping missing targets and subsampling")]
    NoRows,
    #[error("target has a single class after preprocessing (positive label {positive:?})")]
    SingleClassTarget { positive: String },
    #[error("column {column:?} is degenerate: {reason}")]
    DegenerateColumn { column: String, reason: String },
    #[error("cannot stratify split: class {class} has {available} rows but the test set needs {wanted}, leaving none for training")]
    SplitTooSmall { class: u8, available: usize, wanted: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// How to load and preprocess one CSV dataset.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct IngestConfig {
    /// CSV file with a header row.
    pub path: PathBuf,
    /// Name of the label column.
    pub target_column: String,
    /// Raw target value mapped to class 1; everything else becomes class 0.
    pub positive_label: String,
    /// Columns to treat as categorical; all other non-target columns must
    /// parse as numbers.
    pub categorical_columns: Vec<String>,
    /// Categories rarer than this (counted after subsampling) are merged
    /// into `__other`.
    pub min_category_frequency: usize,
    /// Seeded fraction of rows to keep, in (0, 1].
    pub subsample_fraction: f64,
    /// Base seed for subsampling.
    pub seed: u64,
    /// Whether to z-score the continuous columns.
    pub standardize: bool,
}

impl IngestConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(IngestError::BadConfig {
                what: format!(
                    "subsample_fraction must lie in (0, 1], got {}",
                    self.subsample_fraction
                ),
            });
        }
        if self.categorical_columns.iter().any(|c| *c == self.target_column) {
            return Err(IngestError::BadConfig {
                what: "target column must not be listed as categorical".into(),
            });
        }
        Ok(())
    }
}

/// One typed column of a raw table.
#[derive(Debug, Clone)]
pub enum RawColumn {
    Numeric { name: String, values: Vec<Option<f64>> },
    Text { name: String, values: Vec<Option<String>> },
}

impl RawColumn {
    pub fn name(&self) -> &str {
        match self {
            RawColumn::Numeric { name, .. } | RawColumn::Text { name, .. } => name,
        }
    }
}

/// A typed CSV table: feature columns plus the raw target values.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub columns: Vec<RawColumn>,
    /// Raw target cell per row (`None` = missing).
    pub target: Vec<Option<String>>,
    pub n_rows: usize,
}

fn missing(cell: &str) -> bool {
    matches!(cell, "" | "?" | "NA")
}

/// Load a CSV file with a header into a typed table. Columns named in
/// `cfg.categorical_columns` stay text; every other non-target column must
/// parse as a number (missing markers excepted). Cells are whitespace-trimmed.
pub fn load_csv(cfg: &IngestConfig) -> Result<RawTable, IngestError> {
    cfg.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&cfg.path)
        .map_err(|e| IngestError::Io { path: cfg.path.clone(), reason: e.to_string() })?;

    let headers: Vec<String> =
        reader.headers().map_err(|e| IngestError::Csv(e.to_string()))?.iter().map(String::from).collect();
    {
        let mut sorted = headers.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(IngestError::BadConfig { what: "duplicate column name in header".into() });
        }
    }
    let target_idx = headers
        .iter()
        .position(|h| *h == cfg.target_column)
        .ok_or_else(|| IngestError::MissingTargetColumn { name: cfg.target_column.clone() })?;
    for cat in &cfg.categorical_columns {
        if !headers.iter().any(|h| h == cat) {
            return Err(IngestError::UnknownCategoricalColumn { name: cat.clone() });
        }
    }

    let mut columns: Vec<RawColumn> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, name)| {
            if cfg.categorical_columns.iter().any(|c| c == name) {
                RawColumn::Text { name: name.clone(), values: Vec::new() }
            } else {
                RawColumn::Numeric { name: name.clone(), values: Vec::new() }
            }
        })
        .collect();
    let mut target = Vec::new();

    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IngestError::Csv(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(IngestError::Csv(format!(
                "row {}: expected {} fields, got {}",
                row_idx + 1,
                headers.len(),
                record.len()
            )));
        }
        let mut col_cursor = 0;
        for (i, cell) in record.iter().enumerate() {
            if i == target_idx {
                target.push(if missing(cell) { None } else { Some(cell.to_string()) });
                continue;
            }
            match &mut columns[col_cursor] {
                RawColumn::Text { values, .. } => {
                    values.push(if missing(cell) { None } else { Some(cell.to_string()) });
                }
                RawColumn::Numeric { name, values } => {
                    if missing(cell) {
                        values.push(None);
                    } else {
                        let parsed: f64 = cell.parse().map_err(|_| IngestError::UnparseableNumber {
                            row: row_idx + 1,
                            column: name.clone(),
                            value: cell.to_string(),
                        })?;
                        values.push(Some(parsed));
                    }
                }
            }
            col_cursor += 1;
        }
    }

    let n_rows = target.len();
    Ok(RawTable { columns, target, n_rows })
}

/// Preprocess a typed table into an encoded [`Dataset`]:
/// 1. drop rows with a missing target, then keep a seeded subsample of
///    `floor(subsample_fraction * n)` rows (original order preserved);
/// 2. map the target to {0, 1} via `positive_label`;
/// 3. per categorical column: missing becomes `__missing`, categories rarer
///    than `min_category_frequency` merge into `__other`, and the column is
///    one-hot encoded as a full polytope group with indicator columns named
///    `column=category` (categories sorted);
/// 4. per continuous column: missing cells take the column median, then the
///    column is z-scored when `standardize` is set (constant columns are
///    only centered);
/// 5. continuous bounds are the observed min/max after transformation.
///
/// Instance ids are the 0-based row positions in the raw table, so they
/// stay traceable to the source file.
pub fn preprocess(raw: &RawTable, cfg: &IngestConfig) -> Result<Dataset, IngestError> {
    cfg.validate()?;

    // 1. Valid rows, then seeded subsample with original order preserved.
    let valid: Vec<usize> = (0..raw.n_rows).filter(|&i| raw.target[i].is_some()).collect();
    if valid.is_empty() {
        return Err(IngestError::NoRows);
    }
    let kept: Vec<usize> = if cfg.subsample_fraction < 1.0 {
        let k = (cfg.subsample_fraction * valid.len() as f64).floor() as usize;
        if k == 0 {
            return Err(IngestError::NoRows);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, SUBSAMPLE_TAG]));
        let mut shuffled = valid.clone();
        shuffled.shuffle(&mut rng);
        let mut chosen: Vec<usize> = shuffled.into_iter().take(k).collect();
        chosen.sort_unstable();
        chosen
    } else {
        valid
    };

    // 2. Labels.
    let y: Vec<u8> = kept
        .iter()
        .map(|&i| u8::from(raw.target[i].as_deref() == Some(cfg.positive_label.as_str())))
        .collect();
    if y.iter().all(|&l| l == 1) || y.iter().all(|&l| l == 0) {
        return Err(IngestError::SingleClassTarget { positive: cfg.positive_label.clone() });
    }

    // 3./4. Encode columns in their original order, expanding categoricals
    // in place.
    let n = kept.len();
    let mut specs: Vec<ColumnSpec> = Vec::new();
    let mut groups: Vec<PolytopeGroup> = Vec::new();
    let mut encoded: Vec<Vec<f64>> = Vec::new(); // column-major
    for col in &raw.columns {
        match col {
            RawColumn::Text { name, values } => {
                let cats: Vec<String> = kept
                    .iter()
                    .map(|&i| values[i].clone().unwrap_or_else(|| MISSING_CATEGORY.to_string()))
                    .collect();
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for c in &cats {
                    *counts.entry(c.as_str()).or_default() += 1;
                }
                let renamed: Vec<&str> = cats
                    .iter()
                    .map(|c| {
                        if counts[c.as_str()] < cfg.min_category_frequency {
                            OTHER_CATEGORY
                        } else {
                            c.as_str()
                        }
                    })
                    .collect();
                let mut kept_cats: Vec<&str> = {
                    let mut set: Vec<&str> = renamed.clone();
                    set.sort_unstable();
                    set.dedup();
                    set
                };
                kept_cats.sort_unstable();
                if kept_cats.len() < 2 {
                    return Err(IngestError::DegenerateColumn {
                        column: name.clone(),
                        reason: format!(
                            "a single category ({:?}) remains after merging below frequency {}",
                            kept_cats.first().copied().unwrap_or(""),
                            cfg.min_category_frequency
                        ),
                    });
                }
                let first_new_col = specs.len();
                for cat in &kept_cats {
                    specs.push(ColumnSpec::indicator(format!("{name}={cat}"), groups.len()));
                    let mut column = vec![0.0; n];
                    for (r, val) in renamed.iter().enumerate() {
                        if val == cat {
                            column[r] = 1.0;
                        }
                    }
                    encoded.push(column);
                }
                groups.push(PolytopeGroup {
                    id: groups.len(),
                    columns: (first_new_col..specs.len()).collect(),
                    drop_one: false,
                });
            }
            RawColumn::Numeric { name, values } => {
                let mut present: Vec<f64> = kept.iter().filter_map(|&i| values[i]).collect();
                if present.is_empty() {
                    return Err(IngestError::DegenerateColumn {
                        column: name.clone(),
                        reason: "every value is missing".into(),
                    });
                }
                present.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let med = crate::robustness::quantile(&present, 0.5);
                let mut column: Vec<f64> =
                    kept.iter().map(|&i| values[i].unwrap_or(med)).collect();
                if cfg.standardize {
                    let mean = column.iter().sum::<f64>() / n as f64;
                    let sd =
                        (column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
                    for v in &mut column {
                        *v = if sd > 0.0 { (*v - mean) / sd } else { *v - mean };
                    }
                }
                let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                specs.push(if lo < hi {
                    ColumnSpec::bounded(name.clone(), lo, hi)
                } else {
                    // Constant column: no usable box, leave it unbounded.
                    ColumnSpec::continuous(name.clone())
                });
                encoded.push(column);
            }
        }
    }

    let schema = FeatureSchema::new(specs, groups)?;
    let x: Vec<Vec<f64>> =
        (0..n).map(|r| encoded.iter().map(|col| col[r]).collect()).collect();
    let ids: Vec<u64> = kept.iter().map(|&i| i as u64).collect();
    Ok(Dataset::new(x, y, ids, schema)?)
}

/// Load and preprocess in one step.
pub fn ingest_csv(cfg: &IngestConfig) -> Result<Dataset, IngestError> {
    let raw = load_csv(cfg)?;
    preprocess(&raw, cfg)
}

/// Seeded stratified train/test split. The test set gets
/// `round(test_fraction * n)` rows, apportioned across the two classes by
/// largest remainder, so class fractions in both splits track the overall
/// fractions as closely as integer counts allow. Errors when a class would
/// be missing from either split.
pub fn train_test_split(
    d: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), IngestError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(IngestError::BadConfig {
            what: format!("test_fraction must lie in (0, 1), got {test_fraction}"),
        });
    }
    let n = d.n();
    let total_test = (test_fraction * n as f64).round() as usize;

    let by_class: [Vec<usize>; 2] = {
        let mut c = [Vec::new(), Vec::new()];
        for i in 0..n {
            c[d.y[i] as usize].push(i);
        }
        c
    };

    // Largest-remainder apportionment of the test rows over the classes.
    let ideal: Vec<f64> = by_class.iter().map(|c| test_fraction * c.len() as f64).collect();
    let mut take: Vec<usize> = ideal.iter().map(|t| t.floor() as usize).collect();
    let mut leftover = total_test.saturating_sub(take.iter().sum::<usize>());
    let mut order: Vec<usize> = (0..2).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &c in &order {
        if leftover == 0 {
            break;
        }
        take[c] += 1;
        leftover -= 1;
    }

    let mut test_rows = Vec::with_capacity(total_test);
    let mut train_rows = Vec::with_capacity(n - total_test);
    for (class, rows) in by_class.iter().enumerate() {
        let wanted = take[class];
        if wanted == 0 || wanted >= rows.len() {
            return Err(IngestError::SplitTooSmall {
                class: class as u8,
                available: rows.len(),
                wanted,
            });
        }
        let mut shuffled = rows.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(&[seed, SPLIT_TAG, class as u64]));
        shuffled.shuffle(&mut rng);
        test_rows.extend_from_slice(&shuffled[..wanted]);
        train_rows.extend_from_slice(&shuffled[wanted..]);
    }
    test_rows.sort_unstable();
    train_rows.sort_unstable();
    Ok((d.select(&train_rows), d.select(&test_rows)))
}

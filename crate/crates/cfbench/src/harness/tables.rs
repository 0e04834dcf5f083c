//! Derived tables: bucketed descriptive summaries per reporting group,
//! method comparisons with paired tests, and the per-level median-distance
//! versus accuracy table. All of them are recomputable from the raw
//! artifacts (`records.csv`, `accuracy.csv`, manifest) via [`read_run_dir`]
//! plus [`emit_tables`], which is exactly what the `tables` subcommand does.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::datagen::derive_seed;
use crate::robustness::{
    bucket_uncertainty, summarize_values, Bucket, InstanceGroup, PairedDistanceRecord,
};
use crate::stats::{compare_methods, MethodRecords};

use super::config::ExperimentConfig;
use super::{
    AccuracyRow, CompletenessRow, ExclusionEntry, HarnessError, RunManifest, RunRecord, REPORT_TAG,
};

/// Everything the table writers need; the `tables` subcommand reconstructs
/// this from a run directory.
pub struct TableInputs<'a> {
    pub config: &'a ExperimentConfig,
    pub records: &'a [RunRecord],
    pub accuracy: &'a [AccuracyRow],
    pub completeness: &'a [CompletenessRow],
}

/// What table emission decided along the way.
#[derive(Debug, Default)]
pub struct TablesReport {
    pub exclusions: Vec<ExclusionEntry>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    /// File names written into the run directory.
    pub written: Vec<String>,
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Quote a CSV field if it contains a delimiter, quote, or newline.
pub(crate) fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Level-to-bucket map for a schedule of `n_levels`, or `None` when there
/// are too few levels to form regimes.
pub(crate) fn bucket_labels(n_levels: usize) -> Option<BTreeMap<usize, Bucket>> {
    if n_levels < 3 {
        return None;
    }
    let levels: Vec<usize> = (0..n_levels).collect();
    Some(bucket_uncertainty(&levels).expect("three or more distinct levels"))
}

fn stage(what: impl Into<String>) -> HarnessError {
    HarnessError::Stage { stage: "tables".into(), what: what.into() }
}

/// Key for pairing records across methods inside a bucket: one instance at
/// one level of one replicate. Levels share instance ids, so the raw id
/// alone would collide.
fn composite_id(rep: usize, id: u64, level: usize) -> Result<u64, HarnessError> {
    if rep >= 1 << 16 {
        return Err(stage(format!("replicate index {rep} exceeds the pairing-key range")));
    }
    if id >= 1 << 40 {
        return Err(stage(format!("instance id {id} exceeds the pairing-key range")));
    }
    if level >= 1 << 8 {
        return Err(stage(format!("noise level {level} exceeds the pairing-key range")));
    }
    Ok(((rep as u64) << 48) | (id << 8) | level as u64)
}

const NAN: &str = "NaN";

/// Write the derived tables and report exclusions and warnings.
pub fn emit_tables(inputs: &TableInputs, out_dir: &Path) -> Result<TablesReport, HarnessError> {
    let cfg = inputs.config;
    let n_levels = cfg.noise.n_levels;
    let min_completeness = cfg.experiment.min_completeness;
    let filters = cfg.group_filters()?;
    let mut report = TablesReport::default();

    let buckets = bucket_labels(n_levels);
    if buckets.is_none() {
        report.notes.push(format!(
            "bucketed tables skipped: {n_levels} noise levels cannot form \
             Low/Medium/High regimes (3 distinct levels required)"
        ));
    }

    // Pool completeness counts over replicates.
    let mut by_level: BTreeMap<(String, String, usize), (usize, usize)> = BTreeMap::new();
    for c in inputs.completeness {
        let cell = by_level.entry((c.model.clone(), c.method.clone(), c.level)).or_insert((0, 0));
        cell.0 += c.attempted;
        cell.1 += c.valid;
    }
    let combos: BTreeSet<(String, String)> =
        by_level.keys().map(|(m, k, _)| (m.clone(), k.clone())).collect();

    // Completeness per bucket, and the gate.
    let mut bucket_completeness: BTreeMap<(String, String, Bucket), f64> = BTreeMap::new();
    let mut excluded_cells: BTreeSet<(String, String, Bucket)> = BTreeSet::new();
    if let Some(bmap) = &buckets {
        for mspec in &cfg.models {
            for kspec in &cfg.methods {
                let model = mspec.name();
                let method = kspec.name();
                if !combos.contains(&(model.clone(), method.clone())) {
                    continue;
                }
                for bucket in Bucket::ALL {
                    let (mut att, mut val) = (0usize, 0usize);
                    for level in 0..n_levels {
                        if bmap[&level] == bucket {
                            if let Some(&(a, v)) =
                                by_level.get(&(model.clone(), method.clone(), level))
                            {
                                att += a;
                                val += v;
                            }
                        }
                    }
                    if att == 0 {
                        continue;
                    }
                    let c = val as f64 / att as f64;
                    bucket_completeness.insert((model.clone(), method.clone(), bucket), c);
                    if c < min_completeness {
                        excluded_cells.insert((model.clone(), method.clone(), bucket));
                        report.exclusions.push(ExclusionEntry {
                            model: model.clone(),
                            method: method.clone(),
                            bucket: bucket.label().to_string(),
                            completeness: c,
                            reason: format!(
                                "completeness {c:.3} below the {min_completeness:.3} gate"
                            ),
                        });
                    }
                }
            }
        }
    }

    // Descriptive summaries per reporting group.
    if let Some(bmap) = &buckets {
        for (gi, filter) in filters.iter().enumerate() {
            let mut text =
                String::from("model,method,bucket,n,median,p10,p90,iqr,ci_low,ci_high,completeness\n");
            for (mi, mspec) in cfg.models.iter().enumerate() {
                for (ki, kspec) in cfg.methods.iter().enumerate() {
                    let model = mspec.name();
                    let method = kspec.name();
                    if !combos.contains(&(model.clone(), method.clone())) {
                        continue;
                    }
                    for (bi, bucket) in Bucket::ALL.iter().enumerate() {
                        let key = (model.clone(), method.clone(), *bucket);
                        if excluded_cells.contains(&key) {
                            continue;
                        }
                        let comp = bucket_completeness
                            .get(&key)
                            .map_or(NAN.to_string(), |c| c.to_string());
                        let values: Vec<f64> = inputs
                            .records
                            .iter()
                            .map(|rr| &rr.record)
                            .filter(|r| {
                                r.model == model
                                    && r.method == method
                                    && bmap[&r.noise_level] == *bucket
                                    && filter.accepts(r.group)
                            })
                            .map(|r| r.relative_distance)
                            .collect();
                        if values.is_empty() {
                            text.push_str(&format!(
                                "{model},{method},{},0,{NAN},{NAN},{NAN},{NAN},{NAN},{NAN},{comp}\n",
                                bucket.label()
                            ));
                            continue;
                        }
                        let seed = derive_seed(&[
                            cfg.experiment.seed,
                            REPORT_TAG,
                            mi as u64,
                            ki as u64,
                            bi as u64,
                            gi as u64,
                        ]);
                        let s = summarize_values(
                            &values,
                            cfg.report.bootstrap_resamples,
                            cfg.report.alpha,
                            seed,
                        )
                        .map_err(|e| stage(format!("summary for {model}/{method}: {e}")))?;
                        text.push_str(&format!(
                            "{model},{method},{},{},{},{},{},{},{},{},{comp}\n",
                            bucket.label(),
                            s.n,
                            s.median,
                            s.p10,
                            s.p90,
                            s.iqr,
                            s.ci_low,
                            s.ci_high
                        ));
                    }
                }
            }
            let name = format!("descriptive_{}.csv", filter.label().to_lowercase());
            write_text(&out_dir.join(&name), &text)?;
            report.written.push(name);
        }
    }

    // Method comparisons per (model, bucket, group).
    if let Some(bmap) = &buckets {
        let mcmc = cfg.mcmc();
        let mut text = String::from(
            "model,bucket,group,method,is_reference,n_pairs,median,median_delta,statistic,\
             p_value,stars,effect_size,posterior_p_best,posterior_mc_se,posterior_converged\n",
        );
        for mspec in &cfg.models {
            let model = mspec.name();
            for bucket in Bucket::ALL {
                for filter in &filters {
                    let mut ins: Vec<MethodRecords> = Vec::new();
                    for kspec in &cfg.methods {
                        let method = kspec.name();
                        let key = (model.clone(), method.clone(), bucket);
                        if excluded_cells.contains(&key) {
                            continue;
                        }
                        let Some(&comp) = bucket_completeness.get(&key) else { continue };
                        let mut values = Vec::new();
                        for rr in inputs.records {
                            let r = &rr.record;
                            if r.model == model
                                && r.method == method
                                && bmap[&r.noise_level] == bucket
                                && filter.accepts(r.group)
                            {
                                values.push((
                                    composite_id(rr.rep, r.id, r.noise_level)?,
                                    r.relative_distance,
                                ));
                            }
                        }
                        if values.is_empty() {
                            continue;
                        }
                        ins.push(MethodRecords { method, completeness: comp, values });
                    }
                    if ins.is_empty() {
                        continue;
                    }
                    let ctx = format!("{model}/{}/{}", bucket.label(), filter.label());
                    let cmp = compare_methods(&ins, min_completeness, &mcmc)
                        .map_err(|e| stage(format!("comparison {ctx}: {e}")))?;
                    for (method, reason) in &cmp.excluded {
                        report.notes.push(format!("comparison {ctx}: {method} excluded: {reason}"));
                    }
                    if let Some(note) = &cmp.note {
                        report.notes.push(format!("comparison {ctx}: {note}"));
                    }
                    for row in &cmp.rows {
                        text.push_str(&format!(
                            "{model},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                            bucket.label(),
                            filter.label(),
                            row.method,
                            row.is_reference,
                            row.n_pairs,
                            row.median,
                            opt(row.median_delta),
                            opt(row.statistic),
                            opt(row.p_value),
                            row.stars,
                            opt(row.effect_size),
                            opt(row.posterior_p_best),
                            opt(row.posterior_mc_se),
                            row.posterior_converged.map_or(NAN.to_string(), |b| b.to_string()),
                        ));
                    }
                }
            }
        }
        write_text(&out_dir.join("comparison.csv"), &text)?;
        report.written.push("comparison.csv".into());
    }

    // Median distance against model accuracy, per level.
    {
        let mut mean_acc: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
        let mut level_noise: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for a in inputs.accuracy {
            let cell = mean_acc.entry((a.model.clone(), a.level)).or_insert((0.0, 0));
            cell.0 += a.accuracy;
            cell.1 += 1;
            level_noise.entry(a.level).or_insert((a.sigma, a.flip));
        }
        let mut text = String::from(
            "model,method,level,sigma,flip,group,accuracy,n,median_relative_distance\n",
        );
        for mspec in &cfg.models {
            for kspec in &cfg.methods {
                let model = mspec.name();
                let method = kspec.name();
                if !combos.contains(&(model.clone(), method.clone())) {
                    continue;
                }
                for level in 0..n_levels {
                    if !by_level.contains_key(&(model.clone(), method.clone(), level)) {
                        continue;
                    }
                    if let Some(bmap) = &buckets {
                        if excluded_cells.contains(&(model.clone(), method.clone(), bmap[&level])) {
                            continue;
                        }
                    }
                    let (sigma, flip) = level_noise.get(&level).copied().unwrap_or((f64::NAN, f64::NAN));
                    let acc = mean_acc
                        .get(&(model.clone(), level))
                        .map_or(NAN.to_string(), |(s, n)| (s / *n as f64).to_string());
                    for filter in &filters {
                        let values: Vec<f64> = inputs
                            .records
                            .iter()
                            .map(|rr| &rr.record)
                            .filter(|r| {
                                r.model == model
                                    && r.method == method
                                    && r.noise_level == level
                                    && filter.accepts(r.group)
                            })
                            .map(|r| r.relative_distance)
                            .collect();
                        let med = if values.is_empty() {
                            NAN.to_string()
                        } else {
                            crate::robustness::median(&values).to_string()
                        };
                        text.push_str(&format!(
                            "{model},{method},{level},{sigma},{flip},{},{acc},{},{med}\n",
                            filter.label(),
                            values.len()
                        ));
                    }
                }
            }
        }
        write_text(&out_dir.join("median_vs_accuracy.csv"), &text)?;
        report.written.push("median_vs_accuracy.csv".into());
    }

    // Sanity check: accuracy should fall as noise rises.
    for mspec in &cfg.models {
        let model = mspec.name();
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for level in 0..n_levels {
            let values: Vec<f64> = inputs
                .accuracy
                .iter()
                .filter(|a| a.model == model && a.level == level)
                .map(|a| a.accuracy)
                .collect();
            if !values.is_empty() {
                pts.push((level as f64, values.iter().sum::<f64>() / values.len() as f64));
            }
        }
        if pts.len() < 2 {
            continue;
        }
        let levels: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let accs: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let rho = spearman_rho(&levels, &accs);
        if !(rho <= -0.5) {
            report.warnings.push(format!(
                "model {model}: accuracy does not clearly decrease with noise \
                 (spearman rho {rho:.2} over levels; expected <= -0.5)"
            ));
        }
    }

    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(NAN.to_string(), |x| x.to_string())
}

// ── Rank correlation ────────────────────────────────────────────────────────

/// Average ranks (1-based), ties sharing the mean rank of their run.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. NaN when either
/// side has no variance.
fn spearman_rho(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

// ── Reading a run directory back ────────────────────────────────────────────

/// Load the config, records, accuracy rows, and completeness counts from a
/// finished run directory.
pub fn read_run_dir(
    run_dir: &Path,
) -> Result<(ExperimentConfig, Vec<RunRecord>, Vec<AccuracyRow>, Vec<CompletenessRow>), HarnessError>
{
    let manifest_path = run_dir.join("manifest.json");
    let manifest_text =
        std::fs::read_to_string(&manifest_path).map_err(|e| HarnessError::io(&manifest_path, e))?;
    let manifest: RunManifest = serde_json::from_str(&manifest_text).map_err(|e| {
        HarnessError::Io { path: manifest_path.display().to_string(), reason: e.to_string() }
    })?;

    let records = read_records_csv(&run_dir.join("records.csv"))?;
    let accuracy = read_accuracy_csv(&run_dir.join("accuracy.csv"))?;
    Ok((manifest.config, records, accuracy, manifest.completeness))
}

fn read_lines(path: &Path, expect_header: &str) -> Result<Vec<String>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == expect_header => {}
        other => {
            return Err(HarnessError::Io {
                path: path.display().to_string(),
                reason: format!("unexpected header {other:?}"),
            })
        }
    }
    Ok(lines.map(|l| l.to_string()).collect())
}

fn parse_err(path: &Path, line: &str, what: &str) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        reason: format!("cannot parse line {line:?}: {what}"),
    }
}

fn read_records_csv(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let header = "rep,level,bucket,model,method,group,id,distance,relative_distance";
    let mut out = Vec::new();
    for line in read_lines(path, header)? {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(parse_err(path, &line, "expected 9 fields"));
        }
        let group = match f[5] {
            "TN" => InstanceGroup::TrueNegative,
            "FN" => InstanceGroup::FalseNegative,
            other => return Err(parse_err(path, &line, &format!("unknown group {other:?}"))),
        };
        let parse_f = |s: &str, what: &str| {
            s.parse::<f64>().map_err(|_| parse_err(path, &line, what))
        };
        out.push(RunRecord {
            rep: f[0].parse().map_err(|_| parse_err(path, &line, "rep"))?,
            record: PairedDistanceRecord {
                id: f[6].parse().map_err(|_| parse_err(path, &line, "id"))?,
                noise_level: f[1].parse().map_err(|_| parse_err(path, &line, "level"))?,
                model: f[3].to_string(),
                method: f[4].to_string(),
                group,
                distance: parse_f(f[7], "distance")?,
                relative_distance: parse_f(f[8], "relative_distance")?,
            },
        });
    }
    Ok(out)
}

fn read_accuracy_csv(path: &Path) -> Result<Vec<AccuracyRow>, HarnessError> {
    let header = "rep,level,sigma,flip,model,n_train,n_test,accuracy";
    let mut out = Vec::new();
    for line in read_lines(path, header)? {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(parse_err(path, &line, "expected 8 fields"));
        }
        out.push(AccuracyRow {
            rep: f[0].parse().map_err(|_| parse_err(path, &line, "rep"))?,
            level: f[1].parse().map_err(|_| parse_err(path, &line, "level"))?,
            sigma: f[2].parse().map_err(|_| parse_err(path, &line, "sigma"))?,
            flip: f[3].parse().map_err(|_| parse_err(path, &line, "flip"))?,
            model: f[4].to_string(),
            n_train: f[5].parse().map_err(|_| parse_err(path, &line, "n_train"))?,
            n_test: f[6].parse().map_err(|_| parse_err(path, &line, "n_test"))?,
            accuracy: f[7].parse().map_err(|_| parse_err(path, &line, "accuracy"))?,
        });
    }
    Ok(out)
}

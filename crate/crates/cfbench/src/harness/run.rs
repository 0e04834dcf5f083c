//! Experiment execution: replicate loop, noise-level datasets, fixed split,
//! dispersion weights, per-level model fits, counterfactual search, and
//! pairing against the clean baseline. Raw artifacts and the manifest are
//! written here; derived tables come from [`super::tables`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::cfgen::{
    milp_counterfactual, milp_marginal_counterfactual, milp_mean_counterfactual,
    nice_counterfactual, random_search_counterfactual, CeSearchConfig, CfgenError, Counterfactual,
};
use crate::data::{pair_instances, Dataset, FeatureSchema, NoiseKind, NoiseSpec, WeightVector};
use crate::datagen::{
    build_mock, build_noise_schedule, corrupt_categoricals, derive_seed, inject_aleatoric,
    inject_epistemic, mock_level_dataset, omit_columns,
};
use crate::ingest::{ingest_csv, train_test_split};
use crate::models::{
    accuracy, fit_bayes_logistic, fit_logistic, fit_mlp, fit_random_forest, BayesianLinearModel,
    Classifier, LinearModel, Mlp, MlpConfig, RandomForest,
};
use crate::robustness::{
    feature_weights, relative_distance, weighted_l1, InstanceGroup, PairedDistanceRecord,
    RobustnessError,
};

use super::config::{DatasetSection, ExperimentConfig, MethodSpecConfig, ModelSpecConfig, NoiseFamily};
use super::tables::{self, emit_tables, TableInputs};
use super::{
    AccuracyRow, CompletenessRow, HarnessError, ManifestAccuracyCell, RunManifest, RunRecord,
    CE_TAG, MODEL_TAG, NOISE_TAG, REPORT_TAG, REP_TAG, TIMING_MASKED,
};

/// A finished run: where it went and what the manifest recorded.
#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
}

/// One counterfactual attempt, tagged for the attempt log.
pub(crate) struct CfRow {
    pub rep: usize,
    pub level: usize,
    pub model: String,
    pub method: String,
    pub group: InstanceGroup,
    pub cf: Counterfactual,
}

/// Everything accumulated while the pipeline runs.
#[derive(Default)]
struct Collected {
    records: Vec<RunRecord>,
    cf_rows: Vec<CfRow>,
    accuracy: Vec<AccuracyRow>,
    completeness: Vec<CompletenessRow>,
    registry: BTreeMap<String, u64>,
    notes: Vec<String>,
    warnings: Vec<String>,
    /// (stage, seconds) in execution order; printed, never persisted.
    timings: Vec<(String, f64)>,
}

impl Collected {
    fn time(&mut self, stage: &str, t0: Instant) {
        self.timings.push((stage.to_string(), t0.elapsed().as_secs_f64()));
    }
}

type StageResult<T> = Result<T, (String, String)>;

fn stage_err<E: std::fmt::Display>(stage: &str, context: &str, e: E) -> (String, String) {
    (stage.to_string(), format!("{context}: {e}"))
}

/// Run a validated experiment, writing all artifacts into `out_dir`.
///
/// On a stage failure the partial raw artifacts plus an
/// `error_manifest.json` naming the failed stage are written before the
/// error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;

    let mut col = Collected::default();
    if let Err((stage, what)) = pipeline(cfg, &mut col) {
        let written = flush_raw_artifacts(cfg, out_dir, &col).unwrap_or_default();
        write_error_manifest(cfg, out_dir, &stage, &what, &written)?;
        print_timings(&col.timings);
        return Err(HarnessError::Stage { stage, what });
    }

    let t0 = Instant::now();
    let mut written = flush_raw_artifacts(cfg, out_dir, &col)?;
    let inputs = TableInputs {
        config: cfg,
        records: &col.records,
        accuracy: &col.accuracy,
        completeness: &col.completeness,
    };
    let report = match emit_tables(&inputs, out_dir) {
        Ok(report) => report,
        Err(e) => {
            let (stage, what) = match e {
                HarnessError::Stage { stage, what } => (stage, what),
                other => ("tables".to_string(), other.to_string()),
            };
            write_error_manifest(cfg, out_dir, &stage, &what, &written)?;
            return Err(HarnessError::Stage { stage, what });
        }
    };
    col.time("tables", t0);
    col.notes.extend(report.notes);
    col.warnings.extend(report.warnings);
    written.extend(report.written);

    let manifest = build_manifest(cfg, &col, report.exclusions);
    let manifest_path = out_dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| HarnessError::Stage { stage: "manifest".into(), what: e.to_string() })?;
    tables::write_text(&manifest_path, &format!("{body}\n"))?;
    written.push("manifest.json".into());

    print_timings(&col.timings);
    println!("run {}: wrote {} under {}", cfg.experiment.name, written.join(", "), out_dir.display());
    for w in &manifest.warnings {
        println!("warning: {w}");
    }
    if !manifest.exclusions.is_empty() {
        println!("{} table cell(s) excluded by the completeness gate", manifest.exclusions.len());
    }
    Ok(RunOutcome { out_dir: out_dir.to_path_buf(), manifest })
}

// ── Pipeline ────────────────────────────────────────────────────────────────

fn pipeline(cfg: &ExperimentConfig, col: &mut Collected) -> StageResult<()> {
    let n_levels = cfg.noise.n_levels;
    let seed = cfg.experiment.seed;
    col.registry.insert("report".into(), derive_seed(&[seed, REPORT_TAG]));

    for rep in 0..cfg.experiment.n_replicates {
        let rep_seed = derive_seed(&[seed, REP_TAG, rep as u64]);
        let noise_seed = derive_seed(&[rep_seed, NOISE_TAG]);
        col.registry.insert(format!("rep{rep}"), rep_seed);
        col.registry.insert(format!("rep{rep}/noise"), noise_seed);
        col.registry.insert(format!("rep{rep}/split"), rep_seed);

        let ctx = format!("replicate {rep}");

        // Per-level datasets.
        let t0 = Instant::now();
        let (levels, schedule) = build_levels(cfg, rep_seed, noise_seed, &mut col.notes)
            .map_err(|e| stage_err("data", &ctx, e))?;
        col.time("data", t0);

        // One stratified split, fixed across levels by instance id.
        let t0 = Instant::now();
        let parts = split_levels(cfg, &levels, rep_seed).map_err(|e| stage_err("split", &ctx, e))?;
        col.time("split", t0);

        // Dispersion weights on the clean training split, projected onto
        // each level's (possibly reduced) column set by column name.
        let t0 = Instant::now();
        let (w_levels, projections) =
            level_weights(rep, &levels, &parts[0].0, &mut col.notes).map_err(|e| stage_err("weights", &ctx, e))?;
        col.time("weights", t0);

        // Fit every model at every level; collect accuracy and the
        // counterfactual population (test instances predicted as the source
        // class).
        let t0 = Instant::now();
        let mut fitted: Vec<Vec<FittedModel>> = Vec::with_capacity(n_levels);
        let mut populations: Vec<Vec<Vec<PopMember>>> = Vec::with_capacity(n_levels);
        for t in 0..n_levels {
            let (train_t, test_t) = &parts[t];
            let mut row_models = Vec::with_capacity(cfg.models.len());
            let mut row_pops = Vec::with_capacity(cfg.models.len());
            for (mi, mspec) in cfg.models.iter().enumerate() {
                let name = mspec.name();
                let fit_seed = derive_seed(&[rep_seed, MODEL_TAG, mi as u64, t as u64]);
                col.registry.insert(format!("rep{rep}/level{t}/model:{name}"), fit_seed);
                let fctx = format!("{ctx}, level {t}, model {name}");
                let fm = fit_model(mspec, train_t, fit_seed).map_err(|e| stage_err("fit", &fctx, e))?;
                let acc = accuracy(fm.classifier(), test_t).map_err(|e| stage_err("fit", &fctx, e))?;
                col.accuracy.push(AccuracyRow {
                    rep,
                    level: t,
                    sigma: schedule[t].feature_sigma,
                    flip: schedule[t].label_flip_rate,
                    model: name.clone(),
                    n_train: train_t.n(),
                    n_test: test_t.n(),
                    accuracy: acc,
                });
                row_pops.push(population(
                    fm.classifier(),
                    test_t,
                    cfg.experiment.target_class,
                    cfg.report.max_ce_instances,
                ));
                row_models.push(fm);
            }
            fitted.push(row_models);
            populations.push(row_pops);
        }
        col.time("fit", t0);

        // Counterfactual search for every compatible (model, method) pair.
        let t0 = Instant::now();
        let mut cf_store: BTreeMap<(usize, usize, usize), Vec<Counterfactual>> = BTreeMap::new();
        for t in 0..n_levels {
            let (train_t, _) = &parts[t];
            for (mi, mspec) in cfg.models.iter().enumerate() {
                let model_name = mspec.name();
                for (ki, kspec) in cfg.methods.iter().enumerate() {
                    if !kspec.compatible(mspec) {
                        continue;
                    }
                    let method_name = kspec.name();
                    let ce_seed = derive_seed(&[rep_seed, CE_TAG, t as u64, mi as u64, ki as u64]);
                    col.registry.insert(
                        format!("rep{rep}/level{t}/model:{model_name}/method:{method_name}"),
                        ce_seed,
                    );
                    let ce_cfg = CeSearchConfig {
                        epsilon_margin: method_epsilon(kspec),
                        budget: method_budget(kspec),
                        seed: ce_seed,
                        target_class: cfg.experiment.target_class,
                    };
                    let pop = &populations[t][mi];
                    let gctx =
                        format!("{ctx}, level {t}, model {model_name}, method {method_name}");
                    let cfs = generate_all(
                        kspec,
                        &fitted[t][mi],
                        train_t,
                        pop,
                        &w_levels[t],
                        &levels[t].schema,
                        &ce_cfg,
                    )
                    .map_err(|e| stage_err("counterfactuals", &gctx, e))?;
                    let valid = cfs.iter().filter(|c| c.valid).count();
                    col.completeness.push(CompletenessRow {
                        rep,
                        level: t,
                        model: model_name.clone(),
                        method: method_name.clone(),
                        attempted: cfs.len(),
                        valid,
                    });
                    for (cf, member) in cfs.iter().zip(pop) {
                        debug_assert_eq!(cf.id, member.id);
                        col.cf_rows.push(CfRow {
                            rep,
                            level: t,
                            model: model_name.clone(),
                            method: method_name.clone(),
                            group: member.group,
                            cf: cf.clone(),
                        });
                    }
                    cf_store.insert((mi, ki, t), cfs);
                }
            }
        }
        col.time("counterfactuals", t0);

        // Pair each level's counterfactuals against the clean baseline and
        // record weighted distances.
        let t0 = Instant::now();
        let mut zero_norm_skipped = 0usize;
        for (mi, mspec) in cfg.models.iter().enumerate() {
            let model_name = mspec.name();
            for (ki, kspec) in cfg.methods.iter().enumerate() {
                if !kspec.compatible(mspec) {
                    continue;
                }
                let method_name = kspec.name();
                let base = &cf_store[&(mi, ki, 0)];
                for t in 0..n_levels {
                    let noisy = &cf_store[&(mi, ki, t)];
                    let pctx =
                        format!("{ctx}, level {t}, model {model_name}, method {method_name}");
                    let pairs =
                        pair_instances(base, noisy).map_err(|e| stage_err("pairing", &pctx, e))?;
                    let groups: BTreeMap<u64, InstanceGroup> =
                        populations[t][mi].iter().map(|p| (p.id, p.group)).collect();
                    for (id, base_cf, noisy_cf) in pairs {
                        let proj_point: Vec<f64> =
                            projections[t].iter().map(|&i0| base_cf.point[i0]).collect();
                        let dist = weighted_l1(&noisy_cf.point, &proj_point, &w_levels[t])
                            .map_err(|e| stage_err("pairing", &pctx, e))?;
                        let rel = match relative_distance(&noisy_cf.point, &proj_point, &w_levels[t])
                        {
                            Ok(rel) => rel,
                            Err(RobustnessError::ZeroNormBaseline) => {
                                zero_norm_skipped += 1;
                                continue;
                            }
                            Err(e) => return Err(stage_err("pairing", &pctx, e)),
                        };
                        let group = *groups.get(&id).expect("paired id came from the population");
                        col.records.push(RunRecord {
                            rep,
                            record: PairedDistanceRecord {
                                id,
                                noise_level: t,
                                model: model_name.clone(),
                                method: method_name.clone(),
                                group,
                                distance: dist,
                                relative_distance: rel,
                            },
                        });
                    }
                }
            }
        }
        if zero_norm_skipped > 0 {
            col.notes.push(format!(
                "replicate {rep}: skipped {zero_norm_skipped} pair(s) whose baseline \
                 counterfactual has zero weighted norm (relative distance undefined)"
            ));
        }
        col.time("pairing", t0);
    }
    Ok(())
}

// ── Datasets per level ──────────────────────────────────────────────────────

fn build_levels(
    cfg: &ExperimentConfig,
    rep_seed: u64,
    noise_seed: u64,
    notes: &mut Vec<String>,
) -> Result<(Vec<Dataset>, Vec<NoiseSpec>), String> {
    let noise = &cfg.noise;
    let mut schedule = build_noise_schedule(noise.n_levels, noise.max_sigma, noise.max_flip)
        .map_err(|e| e.to_string())?;
    if noise.family == NoiseFamily::StudentT {
        for spec in schedule.iter_mut().skip(1) {
            spec.noise_kind = NoiseKind::StudentT { df: noise.student_t_df };
        }
    }

    match &cfg.dataset {
        DatasetSection::Mock { .. } => {
            let (mock_spec, n_bins) = cfg.dataset.mock_spec(rep_seed).expect("mock variant");
            let mock = build_mock(&mock_spec, n_bins).map_err(|e| e.to_string())?;
            let omitted = resolve_omissions(
                &mock.encoded.schema,
                &noise.omit_columns,
                mock_spec.missing_variables,
                notes,
            )?;
            for spec in schedule.iter_mut().skip(1) {
                spec.omitted_columns = omitted.clone();
            }
            let mut levels = Vec::with_capacity(schedule.len());
            for spec in &schedule {
                levels.push(
                    mock_level_dataset(&mock, spec, noise_seed)
                        .map_err(|e| format!("level {}: {e}", spec.level))?,
                );
            }
            Ok((levels, schedule))
        }
        DatasetSection::Csv { .. } => {
            let ing = cfg.dataset.ingest_config(rep_seed).expect("csv variant");
            let base = ingest_csv(&ing).map_err(|e| e.to_string())?;
            let omitted = resolve_omissions(&base.schema, &noise.omit_columns, false, notes)?;
            for spec in schedule.iter_mut().skip(1) {
                spec.omitted_columns = omitted.clone();
            }
            let mut levels = Vec::with_capacity(schedule.len());
            for spec in &schedule {
                levels.push(
                    csv_level_dataset(&base, spec, noise_seed)
                        .map_err(|e| format!("level {}: {e}", spec.level))?,
                );
            }
            Ok((levels, schedule))
        }
    }
}

/// One noise level of an ingested dataset: continuous noise and label flips,
/// categorical resampling at the same ramp as the flip rate (real categories
/// have no latent source to perturb), then column omission.
fn csv_level_dataset(base: &Dataset, spec: &NoiseSpec, seed: u64) -> Result<Dataset, String> {
    let mut inject_spec = spec.clone();
    inject_spec.omitted_columns = BTreeSet::new();
    let noisy = match inject_spec.noise_kind {
        NoiseKind::Gaussian => inject_aleatoric(base, &inject_spec, seed),
        NoiseKind::StudentT { .. } => inject_epistemic(base, &inject_spec, seed),
    }
    .map_err(|e| e.to_string())?;
    let corrupted = if !base.schema.groups.is_empty() && spec.label_flip_rate > 0.0 {
        corrupt_categoricals(&noisy, spec.label_flip_rate, spec.level, seed).map_err(|e| e.to_string())?
    } else {
        noisy
    };
    if spec.omitted_columns.is_empty() {
        Ok(corrupted)
    } else {
        omit_columns(&corrupted, &spec.omitted_columns).map_err(|e| e.to_string())
    }
}

/// Turn configured omission column names into schema indices. A mock dataset
/// flagged `missing_variables` with no explicit list omits its first
/// continuous column.
fn resolve_omissions(
    schema: &FeatureSchema,
    names: &[String],
    missing_variables: bool,
    notes: &mut Vec<String>,
) -> Result<BTreeSet<usize>, String> {
    let mut omitted = BTreeSet::new();
    if names.is_empty() {
        if missing_variables {
            let j = *schema
                .continuous_indices()
                .first()
                .ok_or_else(|| "missing_variables needs a continuous column to omit".to_string())?;
            let name = schema.columns[j].name.clone();
            if notes.iter().all(|n| !n.contains(&format!("omitting column {name:?}"))) {
                notes.push(format!("omitting column {name:?} at every level >= 1"));
            }
            omitted.insert(j);
        }
        return Ok(omitted);
    }
    for name in names {
        let j = schema
            .column_index(name)
            .ok_or_else(|| format!("omit column {name:?} not found in the dataset"))?;
        if !schema.columns[j].is_continuous() {
            return Err(format!("omit column {name:?} is not continuous"));
        }
        omitted.insert(j);
    }
    Ok(omitted)
}

// ── Split and weights ───────────────────────────────────────────────────────

/// Stratified-split the clean level, then carry the same id partition to
/// every level so train/test membership never varies with noise.
fn split_levels(
    cfg: &ExperimentConfig,
    levels: &[Dataset],
    rep_seed: u64,
) -> Result<Vec<(Dataset, Dataset)>, String> {
    let (_, test0) = train_test_split(&levels[0], cfg.split.test_fraction, rep_seed)
        .map_err(|e| e.to_string())?;
    let test_ids: BTreeSet<u64> = test0.ids.iter().copied().collect();
    let mut parts = Vec::with_capacity(levels.len());
    for d in levels {
        debug_assert_eq!(d.ids, levels[0].ids, "levels must share instance ids in order");
        let mut train_rows = Vec::new();
        let mut test_rows = Vec::new();
        for (i, id) in d.ids.iter().enumerate() {
            if test_ids.contains(id) {
                test_rows.push(i);
            } else {
                train_rows.push(i);
            }
        }
        parts.push((d.select(&train_rows), d.select(&test_rows)));
    }
    Ok(parts)
}

/// Dispersion weights estimated once on the clean training split, then
/// projected by column name onto every level's schema. Also returns, per
/// level, the map from level column index to clean-level column index, used
/// to project baseline counterfactual points.
fn level_weights(
    rep: usize,
    levels: &[Dataset],
    train0: &Dataset,
    notes: &mut Vec<String>,
) -> Result<(Vec<WeightVector>, Vec<Vec<usize>>), String> {
    let reference = format!("rep{rep}/level0/train");
    let estimate = feature_weights(train0, &reference).map_err(|e| e.to_string())?;
    for fb in &estimate.fallbacks {
        notes.push(format!("replicate {rep}: weight fallback {fb:?}"));
    }
    let schema0 = &levels[0].schema;
    let mut weights = Vec::with_capacity(levels.len());
    let mut projections = Vec::with_capacity(levels.len());
    for d in levels {
        let mut proj = Vec::with_capacity(d.schema.n_columns());
        for col in &d.schema.columns {
            let i0 = schema0
                .column_index(&col.name)
                .ok_or_else(|| format!("column {:?} missing from the clean level", col.name))?;
            proj.push(i0);
        }
        let w = WeightVector {
            w: proj.iter().map(|&i0| estimate.weights.w[i0]).collect(),
            reference_split_id: estimate.weights.reference_split_id.clone(),
        };
        weights.push(w);
        projections.push(proj);
    }
    Ok((weights, projections))
}

// ── Models and populations ──────────────────────────────────────────────────

/// A trained classifier of any supported family.
pub(crate) enum FittedModel {
    Linear(LinearModel),
    Bayes(BayesianLinearModel),
    Forest(RandomForest),
    Net(Mlp),
}

impl FittedModel {
    pub(crate) fn classifier(&self) -> &dyn Classifier {
        match self {
            FittedModel::Linear(m) => m,
            FittedModel::Bayes(m) => m,
            FittedModel::Forest(m) => m,
            FittedModel::Net(m) => m,
        }
    }
}

fn fit_model(
    spec: &ModelSpecConfig,
    train: &Dataset,
    seed: u64,
) -> Result<FittedModel, crate::models::ModelError> {
    match spec {
        ModelSpecConfig::Logistic { l2, .. } => Ok(FittedModel::Linear(fit_logistic(train, *l2)?)),
        ModelSpecConfig::BayesLogistic { prior_variance, .. } => {
            Ok(FittedModel::Bayes(fit_bayes_logistic(train, *prior_variance)?))
        }
        ModelSpecConfig::RandomForest { n_trees, max_depth, min_leaf, .. } => Ok(
            FittedModel::Forest(fit_random_forest(train, *n_trees, *max_depth, *min_leaf, seed)?),
        ),
        ModelSpecConfig::Mlp { hidden, epochs, learning_rate, batch_size, .. } => {
            Ok(FittedModel::Net(fit_mlp(
                train,
                &MlpConfig {
                    hidden: hidden.clone(),
                    epochs: *epochs,
                    learning_rate: *learning_rate,
                    batch_size: *batch_size,
                    seed,
                },
            )?))
        }
    }
}

/// One instance that receives a counterfactual.
pub(crate) struct PopMember {
    pub id: u64,
    pub x: Vec<f64>,
    pub group: InstanceGroup,
}

/// The explanation population: test instances the model predicts as the
/// source class (the complement of `target_class`). An instance whose true
/// label matches the prediction is a correct rejection ("TN"); one whose
/// label is the target class is a miss ("FN"). With `target_class = 0` the
/// direction is mirrored and the same two roles apply to predicted
/// positives.
fn population(
    m: &dyn Classifier,
    test: &Dataset,
    target_class: u8,
    cap: Option<usize>,
) -> Vec<PopMember> {
    let source = 1 - target_class;
    let mut members: Vec<PopMember> = test
        .x
        .iter()
        .zip(&test.y)
        .zip(&test.ids)
        .filter_map(|((x, &y), &id)| {
            if m.predict(x) != source {
                return None;
            }
            let group = if y == source {
                InstanceGroup::TrueNegative
            } else {
                InstanceGroup::FalseNegative
            };
            Some(PopMember { id, x: x.clone(), group })
        })
        .collect();
    members.sort_by_key(|p| p.id);
    if let Some(cap) = cap {
        members.truncate(cap);
    }
    members
}

// ── Counterfactual dispatch ─────────────────────────────────────────────────

fn method_epsilon(spec: &MethodSpecConfig) -> f64 {
    match spec {
        MethodSpecConfig::Milp { epsilon, .. }
        | MethodSpecConfig::MilpMean { epsilon, .. }
        | MethodSpecConfig::MilpMarginal { epsilon, .. } => *epsilon,
        MethodSpecConfig::Nice { .. } | MethodSpecConfig::RandomSearch { .. } => 1e-6,
    }
}

fn method_budget(spec: &MethodSpecConfig) -> u64 {
    match spec {
        MethodSpecConfig::RandomSearch { budget, .. } => *budget,
        _ => CeSearchConfig::default().budget,
    }
}

fn generate_all(
    kspec: &MethodSpecConfig,
    fm: &FittedModel,
    train: &Dataset,
    pop: &[PopMember],
    w: &WeightVector,
    schema: &FeatureSchema,
    ce: &CeSearchConfig,
) -> Result<Vec<Counterfactual>, CfgenError> {
    match (kspec, fm) {
        (MethodSpecConfig::Milp { .. }, FittedModel::Linear(m)) => pop
            .par_iter()
            .map(|p| milp_counterfactual(m, p.id, &p.x, w, schema, ce))
            .collect(),
        (MethodSpecConfig::MilpMean { .. }, FittedModel::Bayes(b)) => pop
            .par_iter()
            .map(|p| milp_mean_counterfactual(b, p.id, &p.x, w, schema, ce))
            .collect(),
        (MethodSpecConfig::MilpMarginal { samples, quantile, .. }, FittedModel::Bayes(b)) => pop
            .par_iter()
            .map(|p| milp_marginal_counterfactual(b, p.id, &p.x, w, schema, ce, *samples, *quantile))
            .collect(),
        (MethodSpecConfig::Nice { .. }, _) => pop
            .par_iter()
            .map(|p| nice_counterfactual(fm.classifier(), train, p.id, &p.x, w, schema, ce))
            .collect(),
        (MethodSpecConfig::RandomSearch { proposal_scale, .. }, _) => pop
            .par_iter()
            .map(|p| {
                random_search_counterfactual(fm.classifier(), p.id, &p.x, w, schema, ce, *proposal_scale)
            })
            .collect(),
        _ => Err(CfgenError::BadParam {
            what: "method requires a model family it was not paired with".into(),
        }),
    }
}

// ── Artifacts ───────────────────────────────────────────────────────────────

/// Write the raw artifacts (records, attempts, accuracy). Returns the file
/// names written.
fn flush_raw_artifacts(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    col: &Collected,
) -> Result<Vec<String>, HarnessError> {
    let buckets = tables::bucket_labels(cfg.noise.n_levels);
    let mut written = Vec::new();

    let mut records = String::from("rep,level,bucket,model,method,group,id,distance,relative_distance\n");
    for rr in &col.records {
        let r = &rr.record;
        let bucket = buckets
            .as_ref()
            .and_then(|b| b.get(&r.noise_level))
            .map_or("NA", |b| b.label());
        records.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            rr.rep, r.noise_level, bucket, r.model, r.method, r.group, r.id, r.distance, r.relative_distance
        ));
    }
    tables::write_text(&out_dir.join("records.csv"), &records)?;
    written.push("records.csv".into());

    let mut cfs = String::from("rep,level,model,method,id,group,valid,cost,evaluations,reason,point\n");
    for row in &col.cf_rows {
        let cf = &row.cf;
        let point = cf.point.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
        cfs.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            row.rep,
            row.level,
            row.model,
            row.method,
            cf.id,
            row.group,
            cf.valid,
            cf.cost,
            cf.evaluations,
            tables::csv_escape(cf.reason.as_deref().unwrap_or("")),
            point
        ));
    }
    tables::write_text(&out_dir.join("counterfactuals.csv"), &cfs)?;
    written.push("counterfactuals.csv".into());

    let mut acc = String::from("rep,level,sigma,flip,model,n_train,n_test,accuracy\n");
    for a in &col.accuracy {
        acc.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            a.rep, a.level, a.sigma, a.flip, a.model, a.n_train, a.n_test, a.accuracy
        ));
    }
    tables::write_text(&out_dir.join("accuracy.csv"), &acc)?;
    written.push("accuracy.csv".into());

    Ok(written)
}

fn build_manifest(
    cfg: &ExperimentConfig,
    col: &Collected,
    exclusions: Vec<super::ExclusionEntry>,
) -> RunManifest {
    let mut stage_timings = BTreeMap::new();
    for (stage, _) in &col.timings {
        stage_timings.insert(stage.clone(), TIMING_MASKED.to_string());
    }

    let mut acc_cells = Vec::new();
    for mspec in &cfg.models {
        let name = mspec.name();
        for level in 0..cfg.noise.n_levels {
            let values: Vec<f64> = col
                .accuracy
                .iter()
                .filter(|a| a.model == name && a.level == level)
                .map(|a| a.accuracy)
                .collect();
            if !values.is_empty() {
                acc_cells.push(ManifestAccuracyCell {
                    model: name.clone(),
                    level,
                    mean_accuracy: values.iter().sum::<f64>() / values.len() as f64,
                });
            }
        }
    }

    RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        experiment_name: cfg.experiment.name.clone(),
        config_hash: config_hash(cfg),
        seed_registry: col.registry.clone(),
        stage_timings,
        accuracy: acc_cells,
        completeness: col.completeness.clone(),
        exclusions,
        warnings: col.warnings.clone(),
        notes: col.notes.clone(),
        config: cfg.clone(),
    }
}

/// SHA-256 over the canonical JSON serialization of the config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&canonical);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_error_manifest(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    stage: &str,
    what: &str,
    written: &[String],
) -> Result<(), HarnessError> {
    let body = serde_json::json!({
        "experiment_name": cfg.experiment.name,
        "failed_stage": stage,
        "error": what,
        "partial_artifacts": written,
    });
    let text = serde_json::to_string_pretty(&body).expect("json object serializes");
    tables::write_text(&out_dir.join("error_manifest.json"), &format!("{text}\n"))
}

fn print_timings(timings: &[(String, f64)]) {
    let mut by_stage: Vec<(String, f64)> = Vec::new();
    for (stage, secs) in timings {
        match by_stage.iter_mut().find(|(s, _)| s == stage) {
            Some((_, total)) => *total += secs,
            None => by_stage.push((stage.clone(), *secs)),
        }
    }
    for (stage, secs) in by_stage {
        println!("stage {stage}: {secs:.2}s");
    }
}

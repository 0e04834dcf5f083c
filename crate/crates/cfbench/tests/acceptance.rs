//! Acceptance suite: every shipped guarantee is checked once, sequentially,
//! and reported as a `criterion N: PASS/FAIL` line (run with
//! `cargo test --test acceptance -- --nocapture` to see the lines as they
//! complete). The checks pit each component against an independent oracle —
//! brute-force recomputation, exhaustive enumeration, grid search, grid
//! integration, finite differences — and finish with end-to-end trend,
//! gating, and determinism checks plus a total wall-clock budget.

use std::any::Any;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use cfbench::cfgen::{
    milp_counterfactual, milp_marginal_counterfactual, milp_mean_counterfactual,
    nice_counterfactual, random_search_counterfactual, verify_counterfactual, CeSearchConfig,
    Counterfactual,
};
use cfbench::data::{
    validate_dataset, ColumnSpec, Dataset, FeatureSchema, PolytopeGroup, WeightVector,
};
use cfbench::datagen::{
    build_mock, build_noise_schedule, derive_seed, mock_level_dataset, MockSpec,
    DEFAULT_POLYTOPE_BINS,
};
use cfbench::harness::{read_run_dir, run_experiment, ExperimentConfig};
use cfbench::ingest::train_test_split;
use cfbench::models::{
    fit_bayes_logistic, fit_logistic, fit_mlp, fit_random_forest, logistic_loss_grad,
    neg_log_posterior_grad, neg_log_posterior_hessian, Classifier, LinearModel, Mlp, MlpConfig,
};
use cfbench::robustness::{
    bucket_uncertainty, feature_weights, median, relative_distance, weighted_l1, Bucket,
};
use cfbench::stats::{posterior_p_best, wilcoxon_signed_rank, McmcConfig};

/// Hard budget for the whole suite (criterion 10).
const TOTAL_BUDGET: Duration = Duration::from_secs(20 * 60);

const ARTIFACTS: [&str; 9] = [
    "manifest.json",
    "records.csv",
    "counterfactuals.csv",
    "accuracy.csv",
    "descriptive_all.csv",
    "descriptive_tn.csv",
    "descriptive_fn.csv",
    "comparison.csv",
    "median_vs_accuracy.csv",
];

fn estr<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn panic_text(p: Box<dyn Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panicked without a message".into())
}

// ── Criterion 1: distance metrics vs brute-force recomputation ──────────────

fn c01_metric_oracle() -> Result<String, String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..1000 {
        let d = rng.random_range(1..=40);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w = WeightVector {
            w: (0..d).map(|_| rng.random_range(0.1..2.0)).collect(),
            reference_split_id: "oracle".into(),
        };

        let mut brute = 0.0;
        let mut norm_b = 0.0;
        for j in 0..d {
            brute += w.w[j] * (a[j] - b[j]).abs();
            norm_b += w.w[j] * b[j].abs();
        }

        let got = weighted_l1(&a, &b, &w).map_err(estr)?;
        if (got - brute).abs() > 1e-12 * brute.abs().max(1.0) {
            return Err(format!("case {case}: weighted_l1 {got} vs brute force {brute}"));
        }
        let got_rel = relative_distance(&a, &b, &w).map_err(estr)?;
        let want_rel = brute / norm_b;
        if (got_rel - want_rel).abs() > 1e-12 * want_rel.abs().max(1.0) {
            return Err(format!("case {case}: relative_distance {got_rel} vs {want_rel}"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 1.0 {
        return Err(format!("1000 pairs took {secs:.2}s, budget is 1s"));
    }
    Ok(format!("1000 random pairs (d <= 40) within 1e-12 relative error in {secs:.3}s"))
}

// ── Criterion 2: exact-solver optimality vs grid + category enumeration ─────

struct MilpCase {
    schema: FeatureSchema,
    model: LinearModel,
    origin: Vec<f64>,
    weights: WeightVector,
    beta: Vec<f64>,
    bias: f64,
    bounds: Vec<(f64, f64)>,
    group_cols: Vec<Vec<usize>>,
    feasible_by_construction: bool,
}

fn milp_case(case: u64) -> Result<MilpCase, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[2025, case]));
    let (n_cont, max_poly, max_cats, milli_lo, milli_hi) = match case {
        0..=79 => (1, 3, 4, 300, 1200),
        80..=159 => (2, 2, 4, 200, 500),
        _ => (3, 1, 2, 120, 200),
    };
    let n_poly = rng.random_range(0..=max_poly);
    let infeasible = case % 13 == 5;

    let mut columns = Vec::new();
    let mut origin = Vec::new();
    let mut beta = Vec::new();
    let mut wv = Vec::new();
    let mut bounds = Vec::new();
    for j in 0..n_cont {
        let width = rng.random_range(milli_lo..=milli_hi) as f64 * 1e-3;
        let center: f64 = rng.random_range(-1.0..1.0);
        let frac: f64 = rng.random_range(0.2..0.8);
        let lo = center - width * frac;
        let hi = lo + width;
        columns.push(ColumnSpec::bounded(format!("x{j}"), lo, hi));
        origin.push(rng.random_range((lo + 0.05 * width)..(hi - 0.05 * width)));
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        beta.push(sign * rng.random_range(0.4..2.0));
        wv.push(rng.random_range(0.2..2.0));
        bounds.push((lo, hi));
    }
    let mut groups = Vec::new();
    let mut group_cols: Vec<Vec<usize>> = Vec::new();
    for g in 0..n_poly {
        let k = rng.random_range(2..=max_cats);
        let start = columns.len();
        let cols: Vec<usize> = (0..k)
            .map(|c| {
                columns.push(ColumnSpec::indicator(format!("g{g}c{c}"), g));
                beta.push(rng.random_range(-1.2..1.2));
                wv.push(rng.random_range(0.2..2.0));
                start + c
            })
            .collect();
        let hot = cols[rng.random_range(0..k)];
        for &c in &cols {
            origin.push(if c == hot { 1.0 } else { 0.0 });
        }
        groups.push(PolytopeGroup { id: g, columns: cols.clone(), drop_one: false });
        group_cols.push(cols);
    }
    let schema = FeatureSchema::new(columns, groups).map_err(estr)?;

    // Largest score increase reachable inside the box / by switching
    // categories; the bias is then set so the boundary sits at a known
    // fraction of that reach (past it for the deliberately infeasible cases).
    let mut reach = 0.0;
    for j in 0..n_cont {
        let (lo, hi) = bounds[j];
        reach += if beta[j] > 0.0 {
            beta[j] * (hi - origin[j])
        } else {
            -beta[j] * (origin[j] - lo)
        };
    }
    for cols in &group_cols {
        let current: f64 = cols.iter().map(|&c| beta[c] * origin[c]).sum();
        let best = cols.iter().map(|&c| beta[c]).fold(f64::NEG_INFINITY, f64::max);
        reach += (best - current).max(0.0);
    }
    let rho: f64 =
        if infeasible { rng.random_range(1.15..1.6) } else { rng.random_range(0.05..0.75) };
    let dot: f64 = beta.iter().zip(&origin).map(|(b, v)| b * v).sum();
    let bias = -rho * reach - dot;

    Ok(MilpCase {
        schema,
        model: LinearModel { weights: beta.clone(), bias },
        origin,
        weights: WeightVector { w: wv, reference_split_id: "oracle".into() },
        beta,
        bias,
        group_cols,
        bounds,
        feasible_by_construction: !infeasible,
    })
}

/// Cheapest valid point found by scanning every category combination and a
/// 1e-3 grid over the continuous box. `None` when no grid point flips the
/// prediction.
fn grid_oracle(case: &MilpCase) -> Option<f64> {
    let n_cont = case.bounds.len();
    // Per-dimension candidate values with their cost and score contributions.
    let grids: Vec<Vec<(f64, f64)>> = (0..n_cont)
        .map(|j| {
            let (lo, hi) = case.bounds[j];
            let n = ((hi - lo) / 1e-3).round() as usize;
            (0..=n)
                .map(|i| {
                    let x = if i == n { hi } else { lo + i as f64 * 1e-3 };
                    (
                        case.weights.w[j] * (x - case.origin[j]).abs(),
                        case.beta[j] * x,
                    )
                })
                .collect()
        })
        .collect();

    // Odometer over the category combinations (one hot column per group).
    let mut combo: Vec<usize> = vec![0; case.group_cols.len()];
    let mut best = f64::INFINITY;
    loop {
        let mut base_score = case.bias;
        let mut base_cost = 0.0;
        for (g, cols) in case.group_cols.iter().enumerate() {
            for (ci, &c) in cols.iter().enumerate() {
                let ind = if ci == combo[g] { 1.0 } else { 0.0 };
                base_score += case.beta[c] * ind;
                base_cost += case.weights.w[c] * (ind - case.origin[c]).abs();
            }
        }
        match n_cont {
            1 => {
                for &(c0, s0) in &grids[0] {
                    if base_score + s0 >= 0.0 {
                        let cost = base_cost + c0;
                        if cost < best {
                            best = cost;
                        }
                    }
                }
            }
            2 => {
                for &(c0, s0) in &grids[0] {
                    let score0 = base_score + s0;
                    let cost0 = base_cost + c0;
                    for &(c1, s1) in &grids[1] {
                        if score0 + s1 >= 0.0 {
                            let cost = cost0 + c1;
                            if cost < best {
                                best = cost;
                            }
                        }
                    }
                }
            }
            3 => {
                for &(c0, s0) in &grids[0] {
                    let score0 = base_score + s0;
                    let cost0 = base_cost + c0;
                    for &(c1, s1) in &grids[1] {
                        let score1 = score0 + s1;
                        let cost1 = cost0 + c1;
                        for &(c2, s2) in &grids[2] {
                            if score1 + s2 >= 0.0 {
                                let cost = cost1 + c2;
                                if cost < best {
                                    best = cost;
                                }
                            }
                        }
                    }
                }
            }
            _ => unreachable!("cases use at most 3 continuous features"),
        }

        // Advance the odometer.
        let mut g = 0;
        loop {
            if g == combo.len() {
                return best.is_finite().then_some(best);
            }
            combo[g] += 1;
            if combo[g] < case.group_cols[g].len() {
                break;
            }
            combo[g] = 0;
            g += 1;
        }
    }
}

fn c02_milp_optimality() -> Result<String, String> {
    let t0 = Instant::now();
    let outcomes: Vec<Result<(bool, bool), String>> = (0..200u64)
        .into_par_iter()
        .map(|case_id| {
            let case = milp_case(case_id)?;
            let cfg = CeSearchConfig {
                epsilon_margin: 1e-6,
                budget: 10_000,
                seed: 2,
                target_class: 1,
            };
            let cf = milp_counterfactual(
                &case.model,
                case_id,
                &case.origin,
                &case.weights,
                &case.schema,
                &cfg,
            )
            .map_err(estr)?;
            let grid = grid_oracle(&case);

            if cf.valid {
                verify_counterfactual(&cf, &case.model, &case.weights, &case.schema, 1)
                    .map_err(|e| format!("case {case_id}: {e}"))?;
                match grid {
                    Some(g) => {
                        if cf.cost > g + 1e-4 {
                            return Err(format!(
                                "case {case_id}: solver cost {} exceeds grid optimum {g}",
                                cf.cost
                            ));
                        }
                        Ok((true, true))
                    }
                    // The feasible sliver was thinner than the grid step;
                    // validity was still verified above.
                    None => Ok((true, false)),
                }
            } else {
                if case.feasible_by_construction {
                    return Err(format!(
                        "case {case_id}: solver says infeasible but the boundary is reachable"
                    ));
                }
                if let Some(g) = grid {
                    return Err(format!(
                        "case {case_id}: solver says infeasible but the grid found cost {g}"
                    ));
                }
                Ok((false, false))
            }
        })
        .collect();

    let mut valid = 0usize;
    let mut compared = 0usize;
    for outcome in outcomes {
        let (was_valid, was_compared) = outcome?;
        valid += usize::from(was_valid);
        compared += usize::from(was_compared);
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 120.0 {
        return Err(format!("200 cases took {secs:.1}s, budget is 120s"));
    }
    if compared < 120 {
        return Err(format!("only {compared} of 200 cases had a grid optimum to compare against"));
    }
    Ok(format!(
        "200 instances: {valid} valid (all verified), {compared} cost-checked against the grid, {secs:.1}s"
    ))
}

// ── Criterion 3: every valid counterfactual re-predicts and passes row checks ──

fn c03_validity_universality() -> Result<String, String> {
    let spec = MockSpec {
        n_samples: 3000,
        n_features: 10,
        n_informative: 10,
        n_categorical: 5,
        n_polytopes: 2,
        non_iid: false,
        missing_variables: false,
        class_balance: 0.6,
        class_separation: 0.81,
        seed: 42,
    };
    let mock = build_mock(&spec, DEFAULT_POLYTOPE_BINS).map_err(estr)?;
    let schedule = build_noise_schedule(5, 2.0, 0.3).map_err(estr)?;
    let noise_seed = derive_seed(&[42, 11]);
    let levels: Vec<Dataset> = schedule
        .iter()
        .map(|ns| mock_level_dataset(&mock, ns, noise_seed))
        .collect::<Result<_, _>>()
        .map_err(estr)?;

    let (_, test0) = train_test_split(&levels[0], 0.3, 9).map_err(estr)?;
    let test_ids: BTreeSet<u64> = test0.ids.iter().copied().collect();

    let mut valid_total = 0usize;
    let mut attempts = 0usize;
    for (t, level) in levels.iter().enumerate() {
        let mut tr_idx = Vec::new();
        let mut te_idx = Vec::new();
        for (i, id) in level.ids.iter().enumerate() {
            if test_ids.contains(id) {
                te_idx.push(i);
            } else {
                tr_idx.push(i);
            }
        }
        let train = level.select(&tr_idx);
        let test = level.select(&te_idx);
        let wts = feature_weights(&train, "acc3").map_err(estr)?.weights;
        let lr = fit_logistic(&train, 1e-4).map_err(estr)?;
        let rf =
            fit_random_forest(&train, 100, 8, 5, derive_seed(&[42, 12, t as u64])).map_err(estr)?;

        let mut level_points: Vec<Vec<f64>> = Vec::new();
        let models: [(&dyn Classifier, &str); 2] = [(&lr, "lr"), (&rf, "rf")];
        for (mi, (m, tag)) in models.iter().enumerate() {
            let pop: Vec<usize> = (0..test.n())
                .filter(|&i| m.predict(&test.x[i]) == 0)
                .take(100)
                .collect();
            for (ki, method) in ["milp", "nice", "random"].iter().enumerate() {
                if *method == "milp" && *tag != "lr" {
                    continue;
                }
                let cfg = CeSearchConfig {
                    epsilon_margin: 1e-6,
                    budget: 3000,
                    seed: derive_seed(&[42, 13, t as u64, mi as u64, ki as u64]),
                    target_class: 1,
                };
                let cfs: Vec<Counterfactual> = pop
                    .par_iter()
                    .map(|&i| {
                        let (id, x) = (test.ids[i], &test.x[i]);
                        match *method {
                            "milp" => milp_counterfactual(&lr, id, x, &wts, &level.schema, &cfg),
                            "nice" => {
                                nice_counterfactual(*m, &train, id, x, &wts, &level.schema, &cfg)
                            }
                            _ => random_search_counterfactual(
                                *m,
                                id,
                                x,
                                &wts,
                                &level.schema,
                                &cfg,
                                1.0,
                            ),
                        }
                    })
                    .collect::<Result<_, _>>()
                    .map_err(estr)?;
                attempts += cfs.len();
                for cf in &cfs {
                    if !cf.valid {
                        continue;
                    }
                    if m.predict(&cf.point) != 1 {
                        return Err(format!(
                            "level {t} {tag}/{method}: instance {} flagged valid but re-predicts 0",
                            cf.id
                        ));
                    }
                    verify_counterfactual(cf, *m, &wts, &level.schema, 1)
                        .map_err(|e| format!("level {t} {tag}/{method}: {e}"))?;
                    level_points.push(cf.point.clone());
                    valid_total += 1;
                }
            }
        }

        let n_pts = level_points.len();
        let check = Dataset {
            x: level_points,
            y: vec![1; n_pts],
            ids: (0..n_pts as u64).collect(),
            schema: level.schema.clone(),
        };
        let report = validate_dataset(&check);
        if let Some(first) = report.issues.first() {
            return Err(format!("level {t}: counterfactual fails row checks: {first}"));
        }
    }
    if valid_total < 800 {
        return Err(format!("only {valid_total} valid counterfactuals; the check is too thin"));
    }
    Ok(format!(
        "{valid_total}/{attempts} valid counterfactuals re-predicted the target and passed row checks"
    ))
}

// ── Criterion 4: signed-rank and posterior estimates vs enumeration/grid ────

/// Exhaustive 2^m sign enumeration of the one-sided signed-rank test with
/// zeros ranked (and then dropped) exactly as the Pratt convention demands.
fn enumerate_wilcoxon(diffs: &[f64]) -> (f64, f64) {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&a, &b| diffs[a].abs().partial_cmp(&diffs[b].abs()).unwrap());
    let mut ranks = vec![0.0; diffs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && diffs[order[end]].abs() == diffs[order[start]].abs() {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    let signed: Vec<(f64, bool)> = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d != 0.0)
        .map(|(d, &r)| (r, *d > 0.0))
        .collect();
    let observed: f64 = signed.iter().filter(|(_, pos)| *pos).map(|(r, _)| r).sum();
    let m = signed.len();
    let mut at_least = 0u64;
    for mask in 0..(1u64 << m) {
        let sum: f64 = signed
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, (r, _))| r)
            .sum();
        if sum >= observed - 1e-9 {
            at_least += 1;
        }
    }
    (observed, at_least as f64 / (1u64 << m) as f64)
}

/// Numerical integration of the documented location/scale/df posterior on a
/// 3-d grid, with the location grid aligned so zero is a cell boundary.
fn grid_p_best(diffs: &[f64]) -> f64 {
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let prior_scale = 10.0 * sd;

    let mu_step = 20.0 * sd / 1400.0;
    let k_lo = ((mean - 10.0 * sd) / mu_step).floor() as i64;
    let k_hi = ((mean + 10.0 * sd) / mu_step).ceil() as i64;
    let n_s = 96;
    let (s_lo, s_hi) = ((0.05 * sd).ln(), (20.0 * sd).ln());
    let n_t = 48;
    let (t_lo, t_hi) = ((0.05f64).ln(), (400.0f64).ln());

    // Anchor the exponentials near the posterior mode to avoid overflow.
    let anchor_norm = {
        let (sigma, nu) = (sd, 10.0);
        let half = 0.5 * (nu + 1.0);
        let norm = ln_gamma(half)
            - ln_gamma(0.5 * nu)
            - 0.5 * (nu * std::f64::consts::PI).ln()
            - sigma.ln();
        diffs
            .iter()
            .map(|d| {
                let z = (d - mean) / sigma;
                norm - half * (z * z / nu).ln_1p()
            })
            .sum::<f64>()
    };

    let cells: Vec<(usize, usize)> =
        (0..n_s).flat_map(|si| (0..n_t).map(move |ti| (si, ti))).collect();
    let partial: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(si, ti)| {
            let s = s_lo + (si as f64 + 0.5) * (s_hi - s_lo) / n_s as f64;
            let t = t_lo + (ti as f64 + 0.5) * (t_hi - t_lo) / n_t as f64;
            let sigma = s.exp();
            let nu = 1.0 + t.exp();
            let half = 0.5 * (nu + 1.0);
            let norm = ln_gamma(half)
                - ln_gamma(0.5 * nu)
                - 0.5 * (nu * std::f64::consts::PI).ln()
                - s;
            let mut total = 0.0;
            let mut positive = 0.0;
            for k in k_lo..k_hi {
                let mu = (k as f64 + 0.5) * mu_step;
                let mut lp = -0.5 * (mu / prior_scale).powi(2)
                    - 0.5 * (sigma / prior_scale).powi(2)
                    - (nu - 1.0) / 30.0
                    + s
                    + t
                    - anchor_norm;
                for d in diffs {
                    let z = (d - mu) / sigma;
                    lp += norm - half * (z * z / nu).ln_1p();
                }
                let weight = lp.exp();
                total += weight;
                if mu > 0.0 {
                    positive += weight;
                }
            }
            (total, positive)
        })
        .collect();

    let total: f64 = partial.iter().map(|(t, _)| t).sum();
    let positive: f64 = partial.iter().map(|(_, p)| p).sum();
    positive / total
}

fn posterior_fixture(i: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[7000, i]));
    let n = 8 + ((i as usize) * 5) % 23;
    let shift = match i % 4 {
        0 => 0.8,
        1 => -0.5,
        2 => 0.15,
        _ => 0.0,
    };
    let scale = 0.5 + (i % 3) as f64;
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            let z = if i % 2 == 1 { z / rng.random_range(0.3..1.0) } else { z };
            shift + scale * z
        })
        .collect()
}

fn c04_stat_oracles() -> Result<String, String> {
    let t0 = Instant::now();

    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for case in 0..50 {
        let n = rng.random_range(3..=12);
        // A coarse half-integer lattice forces ties and zeros.
        let x: Vec<f64> = (0..n).map(|_| 0.5 * rng.random_range(-4i32..=4) as f64).collect();
        let y = vec![0.0; n];
        let got = wilcoxon_signed_rank(&x, &y).map_err(estr)?;
        let (statistic, p) = enumerate_wilcoxon(&x);
        if (got.statistic - statistic).abs() > 1e-12 {
            return Err(format!(
                "fixture {case}: statistic {} vs enumerated {statistic}",
                got.statistic
            ));
        }
        if (got.p_value - p).abs() > 1e-12 {
            return Err(format!("fixture {case}: p {} vs enumerated {p}", got.p_value));
        }
        if !got.exact {
            return Err(format!("fixture {case}: expected the exact path for n = {n}"));
        }
    }

    let mut worst: f64 = 0.0;
    for i in 0..10u64 {
        let diffs = posterior_fixture(i);
        let cfg = McmcConfig { chains: 4, draws: 2000, warmup: 1000, seed: 900 + i };
        let got = posterior_p_best(&diffs, &cfg).map_err(estr)?;
        let want = grid_p_best(&diffs);
        let err = (got.p_best - want).abs();
        if err > 0.02 {
            return Err(format!(
                "posterior fixture {i} (n = {}): sampler {:.4} vs grid {:.4}",
                diffs.len(),
                got.p_best,
                want
            ));
        }
        worst = worst.max(err);
    }

    let symmetric: Vec<f64> =
        (1..=8).flat_map(|k| [k as f64 * 0.25, -(k as f64) * 0.25]).collect();
    let null = posterior_p_best(
        &symmetric,
        &McmcConfig { chains: 4, draws: 2000, warmup: 1000, seed: 77 },
    )
    .map_err(estr)?;
    if !(0.45..=0.55).contains(&null.p_best) {
        return Err(format!("symmetric null gave p_best {:.4}, outside [0.45, 0.55]", null.p_best));
    }

    let secs = t0.elapsed().as_secs_f64();
    if secs >= 180.0 {
        return Err(format!("took {secs:.1}s, budget is 180s"));
    }
    Ok(format!(
        "50 enumerations exact, 10 grid integrations within {worst:.4}, null at {:.3}, {secs:.1}s",
        null.p_best
    ))
}

// ── Criterion 5: analytic gradients vs central finite differences ───────────

fn rel_vec_error(exact: &[f64], approx: &[f64]) -> f64 {
    let diff: f64 = exact.iter().zip(approx).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = approx.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn gradient_batch(seed: u64, n: usize, d: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dataset {
        x: (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect(),
        y: (0..n).map(|_| u8::from(rng.random::<bool>())).collect(),
        ids: (0..n as u64).collect(),
        schema: FeatureSchema::all_continuous(d),
    }
}

/// Minimum |pre-activation| across hidden units plus the output probability
/// range: finite differencing is only trustworthy away from the ReLU kinks
/// and the clamped ends of the log-loss.
fn mlp_margins(m: &Mlp, xs: &[Vec<f64>]) -> (f64, f64, f64) {
    let mut min_pre = f64::INFINITY;
    let mut min_p: f64 = 1.0;
    let mut max_p: f64 = 0.0;
    for x in xs {
        let mut act = x.clone();
        let last = m.layers.len() - 1;
        for (l, layer) in m.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.b.len());
            for (row, b) in layer.w.iter().zip(&layer.b) {
                let z: f64 = row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>() + b;
                if l == last {
                    let p = 1.0 / (1.0 + (-z).exp());
                    min_p = min_p.min(p);
                    max_p = max_p.max(p);
                    out.push(p);
                } else {
                    min_pre = min_pre.min(z.abs());
                    out.push(z.max(0.0));
                }
            }
            act = out;
        }
    }
    (min_pre, min_p, max_p)
}

fn c05_gradient_checks() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let d = gradient_batch(5051, 5, 3);
    let theta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h = 1e-5;

    // Plain logistic loss.
    let (_, grad) = logistic_loss_grad(&d, &theta, 0.1);
    let fd: Vec<f64> = (0..theta.len())
        .map(|j| {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[j] += h;
            tm[j] -= h;
            (logistic_loss_grad(&d, &tp, 0.1).0 - logistic_loss_grad(&d, &tm, 0.1).0) / (2.0 * h)
        })
        .collect();
    let lr_err = rel_vec_error(&grad, &fd);
    if lr_err >= 1e-4 {
        return Err(format!("logistic gradient off by {lr_err:.2e}"));
    }

    // Penalized-posterior gradient and Hessian.
    let (_, pgrad) = neg_log_posterior_grad(&d, &theta, 50.0);
    let pfd: Vec<f64> = (0..theta.len())
        .map(|j| {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[j] += h;
            tm[j] -= h;
            (neg_log_posterior_grad(&d, &tp, 50.0).0 - neg_log_posterior_grad(&d, &tm, 50.0).0)
                / (2.0 * h)
        })
        .collect();
    let blr_err = rel_vec_error(&pgrad, &pfd);
    if blr_err >= 1e-4 {
        return Err(format!("posterior gradient off by {blr_err:.2e}"));
    }

    let hess = neg_log_posterior_hessian(&d, &theta, 50.0);
    let dim = theta.len();
    let mut exact = Vec::with_capacity(dim * dim);
    let mut approx = Vec::with_capacity(dim * dim);
    for b in 0..dim {
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[b] += h;
        tm[b] -= h;
        let gp = neg_log_posterior_grad(&d, &tp, 50.0).1;
        let gm = neg_log_posterior_grad(&d, &tm, 50.0).1;
        for a in 0..dim {
            exact.push(hess[(a, b)]);
            approx.push((gp[a] - gm[a]) / (2.0 * h));
        }
    }
    let hess_err = rel_vec_error(&exact, &approx);
    if hess_err >= 1e-4 {
        return Err(format!("posterior Hessian off by {hess_err:.2e}"));
    }

    // Backprop, at a parameter point safely away from the ReLU kinks.
    let mut picked = None;
    for seed in 0..20u64 {
        let train = gradient_batch(derive_seed(&[606, seed]), 30, 3);
        let cfg = MlpConfig {
            hidden: vec![4, 3],
            epochs: 40,
            learning_rate: 0.05,
            batch_size: 8,
            seed,
        };
        let net = fit_mlp(&train, &cfg).map_err(estr)?;
        let batch: Vec<Vec<f64>> = train.x[..5].to_vec();
        let labels: Vec<u8> = train.y[..5].to_vec();
        let (min_pre, min_p, max_p) = mlp_margins(&net, &batch);
        if min_pre > 1e-3 && min_p > 1e-9 && max_p < 1.0 - 1e-9 {
            picked = Some((net, batch, labels));
            break;
        }
    }
    let (net, batch, labels) =
        picked.ok_or("no network with clear ReLU margins in 20 seeds".to_string())?;
    let (_, grads) = net.loss_and_gradients(&batch, &labels);
    let mut probe = net.clone();
    let hb = 1e-6;
    let mut exact = Vec::new();
    let mut approx = Vec::new();
    for l in 0..probe.layers.len() {
        for u in 0..probe.layers[l].b.len() {
            for j in 0..probe.layers[l].w[u].len() {
                exact.push(grads[l].w[u][j]);
                let orig = probe.layers[l].w[u][j];
                probe.layers[l].w[u][j] = orig + hb;
                let lp = probe.loss(&batch, &labels);
                probe.layers[l].w[u][j] = orig - hb;
                let lm = probe.loss(&batch, &labels);
                probe.layers[l].w[u][j] = orig;
                approx.push((lp - lm) / (2.0 * hb));
            }
            exact.push(grads[l].b[u]);
            let orig = probe.layers[l].b[u];
            probe.layers[l].b[u] = orig + hb;
            let lp = probe.loss(&batch, &labels);
            probe.layers[l].b[u] = orig - hb;
            let lm = probe.loss(&batch, &labels);
            probe.layers[l].b[u] = orig;
            approx.push((lp - lm) / (2.0 * hb));
        }
    }
    let mlp_err = rel_vec_error(&exact, &approx);
    if mlp_err >= 1e-4 {
        return Err(format!("backprop gradient off by {mlp_err:.2e}"));
    }

    Ok(format!(
        "relative errors: logistic {lr_err:.1e}, posterior grad {blr_err:.1e}, Hessian {hess_err:.1e}, backprop {mlp_err:.1e}"
    ))
}

// ── Criterion 6: accuracy drop drives the distance ratio ────────────────────

fn c06_trend_reproduction() -> Result<String, String> {
    let t0 = Instant::now();
    let mut passes = 0;
    let mut detail = String::new();
    for seed in [1u64, 2, 3] {
        let toml = format!(
            r#"
            [experiment]
            name = "trend{seed}"
            seed = {seed}
            min_completeness = 0.5

            [dataset]
            kind = "mock"
            n_samples = 3000
            n_features = 10
            n_informative = 10
            n_categorical = 5
            n_polytopes = 2
            class_balance = 0.6
            class_separation = 0.81

            [noise]
            n_levels = 11
            max_sigma = 2.0
            max_flip = 0.3

            [[models]]
            kind = "logistic"

            [[methods]]
            kind = "milp"

            [report]
            bootstrap_resamples = 200
            mcmc_chains = 2
            mcmc_draws = 400
            mcmc_warmup = 200
            max_ce_instances = 150
        "#
        );
        let cfg = ExperimentConfig::from_toml(&toml).map_err(estr)?;
        cfg.validate().map_err(estr)?;
        let tmp = tempfile::tempdir().map_err(estr)?;
        let out = tmp.path().join("run");
        let outcome = run_experiment(&cfg, &out).map_err(estr)?;

        let acc_at = |level: usize| -> Result<f64, String> {
            outcome
                .manifest
                .accuracy
                .iter()
                .find(|c| c.model == "lr" && c.level == level)
                .map(|c| c.mean_accuracy)
                .ok_or_else(|| format!("seed {seed}: no accuracy cell for level {level}"))
        };
        let a0 = acc_at(0)?;
        let a_top = acc_at(10)?;
        let drop = (a0 - a_top) / a0;

        let (_, records, _, _) = read_run_dir(&out).map_err(estr)?;
        let buckets = bucket_uncertainty(&(0..11).collect::<Vec<_>>()).map_err(estr)?;
        let mut low = Vec::new();
        let mut high = Vec::new();
        for r in &records {
            match buckets[&r.record.noise_level] {
                Bucket::Low => low.push(r.record.relative_distance),
                Bucket::High => high.push(r.record.relative_distance),
                Bucket::Medium => {}
            }
        }
        let (low_med, high_med) = (median(&low), median(&high));
        let ratio_ok =
            if low_med > 0.0 { high_med / low_med >= 1.5 } else { high_med > 0.0 };
        if drop >= 0.20 && ratio_ok {
            passes += 1;
        }
        let _ = write!(
            detail,
            "seed {seed}: drop {:.0}%, medians {:.3} -> {:.3}; ",
            100.0 * drop,
            low_med,
            high_med
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 600.0 {
        return Err(format!("took {secs:.1}s, budget is 600s"));
    }
    if passes < 2 {
        return Err(format!("only {passes}/3 seeds show the trend — {detail}"));
    }
    Ok(format!("{passes}/3 seeds: {detail}{secs:.1}s"))
}

// ── Criterion 7: frequentist/Bayesian cost agreement; chance constraint ─────

fn c07_bayes_agreement() -> Result<String, String> {
    let spec = MockSpec {
        n_samples: 3000,
        n_features: 2,
        n_informative: 2,
        class_separation: 1.81,
        class_balance: 0.6,
        seed: 7,
        ..Default::default()
    };
    let mock = build_mock(&spec, DEFAULT_POLYTOPE_BINS).map_err(estr)?;
    let schedule = build_noise_schedule(2, 2.0, 0.3).map_err(estr)?;
    let level0 = mock_level_dataset(&mock, &schedule[0], derive_seed(&[7, 11])).map_err(estr)?;
    let (train, test) = train_test_split(&level0, 0.3, 17).map_err(estr)?;
    let lr = fit_logistic(&train, 1e-4).map_err(estr)?;
    let blr = fit_bayes_logistic(&train, 100.0).map_err(estr)?;
    let wts = feature_weights(&train, "acc7").map_err(estr)?.weights;
    let cfg = CeSearchConfig { epsilon_margin: 1e-6, budget: 10_000, seed: 70, target_class: 1 };

    let mut ratios = Vec::new();
    let mut n_marg = 0usize;
    let mut marg_infeasible = 0usize;
    let mut taken = 0usize;
    for i in 0..test.n() {
        if taken >= 200 {
            break;
        }
        let (id, x) = (test.ids[i], &test.x[i]);
        if lr.predict(x) != 0 || blr.predict(x) != 0 {
            continue;
        }
        taken += 1;
        let c_milp = milp_counterfactual(&lr, id, x, &wts, &level0.schema, &cfg).map_err(estr)?;
        let c_mean =
            milp_mean_counterfactual(&blr, id, x, &wts, &level0.schema, &cfg).map_err(estr)?;
        let c_marg =
            milp_marginal_counterfactual(&blr, id, x, &wts, &level0.schema, &cfg, 16, 1.0)
                .map_err(estr)?;
        if c_milp.valid && c_mean.valid && c_milp.cost > 0.0 {
            ratios.push((c_milp.cost - c_mean.cost).abs() / c_milp.cost);
        }
        if c_mean.valid {
            if c_marg.valid {
                n_marg += 1;
                if c_marg.cost < c_mean.cost - 1e-9 {
                    return Err(format!(
                        "instance {id}: chance-constrained cost {} beats the mean-model cost {}",
                        c_marg.cost, c_mean.cost
                    ));
                }
            } else {
                marg_infeasible += 1;
            }
        }
    }
    if ratios.len() < 50 || n_marg < 50 {
        return Err(format!(
            "too few comparable instances ({} cost pairs, {} chance-constrained)",
            ratios.len(),
            n_marg
        ));
    }
    let med = median(&ratios);
    if med > 0.10 {
        return Err(format!("median relative cost gap {med:.3} exceeds 0.10"));
    }
    Ok(format!(
        "median cost gap {med:.3} over {} instances; chance-constrained >= mean on all {n_marg} ({marg_infeasible} infeasible)",
        ratios.len()
    ))
}

// ── Criterion 8: starved searches are gated out with a manifest entry ───────

fn c08_completeness_gate() -> Result<String, String> {
    let toml = r#"
        [experiment]
        name = "gate"
        seed = 3
        min_completeness = 0.9

        [dataset]
        kind = "mock"
        n_samples = 500
        n_features = 3
        n_informative = 3
        class_separation = 1.4

        [noise]
        n_levels = 3
        max_sigma = 1.0
        max_flip = 0.1

        [[models]]
        kind = "logistic"

        [[methods]]
        kind = "milp"

        [[methods]]
        kind = "random_search"
        budget = 1

        [report]
        bootstrap_resamples = 200
        mcmc_chains = 2
        mcmc_draws = 400
        mcmc_warmup = 200
        max_ce_instances = 40
    "#;
    let cfg = ExperimentConfig::from_toml(toml).map_err(estr)?;
    cfg.validate().map_err(estr)?;
    let tmp = tempfile::tempdir().map_err(estr)?;
    let out = tmp.path().join("run");
    let outcome = run_experiment(&cfg, &out).map_err(estr)?;

    let excluded: Vec<_> =
        outcome.manifest.exclusions.iter().filter(|e| e.method == "random").collect();
    if excluded.is_empty() {
        return Err("budget-1 random search was not excluded".into());
    }
    for e in &excluded {
        if e.completeness >= 0.9 {
            return Err(format!("exclusion records completeness {}", e.completeness));
        }
    }
    let descriptive = fs::read_to_string(out.join("descriptive_all.csv")).map_err(estr)?;
    if descriptive.contains(",random,") {
        return Err("excluded method still appears in the descriptive table".into());
    }
    let comparison = fs::read_to_string(out.join("comparison.csv")).map_err(estr)?;
    if comparison.contains(",random,") {
        return Err("excluded method still appears in the comparison table".into());
    }
    Ok(format!(
        "completeness {:.3} < 0.9: {} exclusion entries, tables clean",
        excluded[0].completeness,
        excluded.len()
    ))
}

// ── Criterion 9: the first preset is byte-for-byte deterministic ────────────

fn c09_preset_determinism() -> Result<String, String> {
    let preset = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets/mock1.toml");
    let text = fs::read_to_string(&preset).map_err(estr)?;
    let cfg = ExperimentConfig::from_toml(&text).map_err(estr)?;
    cfg.validate().map_err(estr)?;

    let tmp = tempfile::tempdir().map_err(estr)?;
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    run_experiment(&cfg, &out_a).map_err(estr)?;
    run_experiment(&cfg, &out_b).map_err(estr)?;

    let mut bytes_total = 0usize;
    for f in ARTIFACTS {
        let a = fs::read(out_a.join(f)).map_err(estr)?;
        let b = fs::read(out_b.join(f)).map_err(estr)?;
        if a != b {
            return Err(format!("{f} differs between the two runs"));
        }
        bytes_total += a.len();
    }
    Ok(format!("9 artifacts byte-identical across two full runs ({bytes_total} bytes)"))
}

// ── Suite driver ─────────────────────────────────────────────────────────────

#[test]
fn acceptance_criteria() {
    type Check = (&'static str, fn() -> Result<String, String>);
    let checks: [Check; 9] = [
        ("distance metrics match brute force", c01_metric_oracle),
        ("exact solver matches grid + enumeration", c02_milp_optimality),
        ("valid counterfactuals re-predict and pass row checks", c03_validity_universality),
        ("rank test and posterior match enumeration/integration", c04_stat_oracles),
        ("analytic gradients match finite differences", c05_gradient_checks),
        ("accuracy drop drives the distance ratio", c06_trend_reproduction),
        ("frequentist and Bayesian costs agree; chance constraint restricts", c07_bayes_agreement),
        ("starved searches are gated out of the tables", c08_completeness_gate),
        ("first preset runs byte-identically", c09_preset_determinism),
    ];

    let suite_start = Instant::now();
    let mut failures = Vec::new();
    for (i, (label, run)) in checks.iter().enumerate() {
        let n = i + 1;
        let t0 = Instant::now();
        let outcome =
            std::panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| Err(panic_text(p)));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2}: PASS ({secs:>6.1}s) {label} — {detail}"),
            Err(why) => {
                println!("criterion {n:>2}: FAIL ({secs:>6.1}s) {label} — {why}");
                failures.push(format!("criterion {n}: {why}"));
            }
        }
    }

    let total = suite_start.elapsed();
    if total <= TOTAL_BUDGET {
        println!(
            "criterion 10: PASS ({:>6.1}s) the whole suite fits the {}-minute budget",
            total.as_secs_f64(),
            TOTAL_BUDGET.as_secs() / 60
        );
    } else {
        let why = format!(
            "suite took {:.1}s, budget is {}s",
            total.as_secs_f64(),
            TOTAL_BUDGET.as_secs()
        );
        println!("criterion 10: FAIL {why}");
        failures.push(format!("criterion 10: {why}"));
    }

    assert!(failures.is_empty(), "{} criteria failed:\n{}", failures.len(), failures.join("\n"));
}

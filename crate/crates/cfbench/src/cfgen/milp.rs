//! Exact weighted-ℓ1 counterfactual search for linear models.
//!
//! The optimization is a mixed-integer program: binary indicator columns tied
//! by one-hot group constraints, plus box-bounded continuous columns, with a
//! linear score margin. It is solved without an external solver:
//!
//! * categorical assignments are enumerated exhaustively when the total
//!   combination count is small (≤ 4096), otherwise explored by depth-first
//!   branch-and-bound with a relaxation lower bound (indicators relaxed to
//!   [0, 1] movers with the group sums dropped);
//! * per assignment the continuous subproblem is solved in closed form for a
//!   single half-space (move along the best cost-to-margin ratio coordinate,
//!   which is exact by the fractional-knapsack argument), or as a small
//!   linear program when the margin must hold across several posterior draws.

use super::lp::{solve_lp, LpOutcome, LpProblem, LpRelation};
use super::{CeSearchConfig, CfgenError, Counterfactual};
use crate::data::{FeatureSchema, WeightVector};
use crate::models::{BayesianLinearModel, LinearModel};
use crate::robustness::weighted_l1;

/// Exhaustive categorical enumeration is used up to this many combinations.
const ENUMERATION_CAP: u128 = 4096;
/// Cap on the number of draw subsets enumerated when the margin quantile is
/// below one.
const SUBSET_CAP: u128 = 200_000;
/// A branch is pruned only when its bound cannot improve the incumbent by
/// more than this, keeping the returned cost within 1e-9 of the optimum.
const PRUNE_TOL: f64 = 1e-12;

/// Exact counterfactual for a plain linear model: the global minimizer of the
/// weighted ℓ1 cost subject to `score(point) ≥ epsilon_margin` (mirrored for
/// target class 0), binary indicators, group row sums, and continuous bounds.
/// Infeasibility yields an invalid result with a reason, not an error.
pub fn milp_counterfactual(
    m: &LinearModel,
    id: u64,
    x: &[f64],
    w: &WeightVector,
    schema: &FeatureSchema,
    cfg: &CeSearchConfig,
) -> Result<Counterfactual, CfgenError> {
    cfg.validate()?;
    let eff = effective_model(m, cfg.target_class);
    solve_chance(&[eff], 1, id, x, w, schema, cfg, "milp")
}

/// The same optimization applied to the posterior-mean linear model of a
/// Bayesian classifier.
pub fn milp_mean_counterfactual(
    b: &BayesianLinearModel,
    id: u64,
    x: &[f64],
    w: &WeightVector,
    schema: &FeatureSchema,
    cfg: &CeSearchConfig,
) -> Result<Counterfactual, CfgenError> {
    cfg.validate()?;
    let eff = effective_model(&b.mean_model(), cfg.target_class);
    solve_chance(&[eff], 1, id, x, w, schema, cfg, "milp_mean")
}

/// Chance-constrained variant: the margin must hold for at least ⌈q·s⌉ of `s`
/// seeded posterior draws (q = 1 enforces every draw). The draw set depends
/// only on the config seed, so one committee is shared across instances.
#[allow(clippy::too_many_arguments)]
pub fn milp_marginal_counterfactual(
    b: &BayesianLinearModel,
    id: u64,
    x: &[f64],
    w: &WeightVector,
    schema: &FeatureSchema,
    cfg: &CeSearchConfig,
    s: usize,
    q: f64,
) -> Result<Counterfactual, CfgenError> {
    cfg.validate()?;
    if s == 0 {
        return Err(CfgenError::BadParam { what: "marginal sample count must be >= 1".into() });
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(CfgenError::BadParam { what: format!("marginal quantile must lie in (0, 1], got {q}") });
    }
    let draws: Vec<LinearModel> =
        b.draw(s, cfg.seed)?.iter().map(|d| effective_model(d, cfg.target_class)).collect();
    // Guard against float dust in q*s (e.g. 0.3 * 10) before taking the ceiling.
    let needed = ((q * s as f64) - 1e-9).ceil().max(1.0) as usize;
    let needed = needed.min(s);
    solve_chance(&draws, needed, id, x, w, schema, cfg, "milp_marg")
}

/// Negate the score for target class 0 so "score ≥ ε" always means "the
/// target class is predicted with margin ε".
fn effective_model(m: &LinearModel, target_class: u8) -> LinearModel {
    if target_class == 1 {
        m.clone()
    } else {
        LinearModel { weights: m.weights.iter().map(|v| -v).collect(), bias: -m.bias }
    }
}

/// One categorical group prepared for enumeration.
struct CatGroup {
    columns: Vec<usize>,
    original: usize,
    /// Per category: flip cost from the original row and the encoded values
    /// for this group's columns.
    options: Vec<(f64, Vec<f64>)>,
}

/// One direction a coordinate can move to raise the margin.
struct Mover {
    column: usize,
    dir: f64,
    /// Margin gained per unit of movement (> 0).
    rate: f64,
    /// Cost per unit of movement.
    weight: f64,
    /// Maximum movement (possibly infinite).
    cap: f64,
}

/// Minimal-cost fill of a single linear constraint: raise the margin by `gap`
/// using the movers. Exact because with one constraint the LP optimum fills
/// coordinates in ascending cost-per-margin order. Returns the extra cost and
/// the chosen movements, or None when the total capacity cannot reach `gap`.
fn greedy_fill(movers: &[Mover], gap: f64) -> Option<(f64, Vec<(usize, f64)>)> {
    if gap <= 0.0 {
        return Some((0.0, Vec::new()));
    }
    let mut order: Vec<usize> = (0..movers.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = movers[a].weight / movers[a].rate;
        let rb = movers[b].weight / movers[b].rate;
        ra.partial_cmp(&rb).unwrap().then(movers[a].column.cmp(&movers[b].column))
    });
    let mut remaining = gap;
    let mut cost = 0.0;
    let mut moves = Vec::new();
    for idx in order {
        let m = &movers[idx];
        if m.cap <= 0.0 {
            continue;
        }
        let need = remaining / m.rate;
        if need <= m.cap {
            cost += m.weight * need;
            moves.push((idx, need));
            return Some((cost, moves));
        }
        cost += m.weight * m.cap;
        moves.push((idx, m.cap));
        remaining -= m.rate * m.cap;
    }
    None
}

struct Search<'a> {
    models: &'a [LinearModel],
    x: &'a [f64],
    w: &'a [f64],
    schema: &'a FeatureSchema,
    epsilon: f64,
    groups: Vec<CatGroup>,
    cont: Vec<usize>,
    evaluations: u64,
    /// Incumbent: (cost, point).
    best: Option<(f64, Vec<f64>)>,
}

impl<'a> Search<'a> {
    /// Movers for the continuous columns under a single effective model,
    /// keeping only margin-raising directions.
    fn continuous_movers(&self, theta: &[f64]) -> Vec<Mover> {
        let mut movers = Vec::new();
        for &j in &self.cont {
            let t = theta[j];
            if t == 0.0 {
                continue;
            }
            let dir = t.signum();
            let cap = match self.schema.bounds(j) {
                Some((lo, hi)) => {
                    if dir > 0.0 {
                        hi - self.x[j]
                    } else {
                        self.x[j] - lo
                    }
                }
                None => f64::INFINITY,
            };
            movers.push(Mover { column: j, dir, rate: t.abs(), weight: self.w[j], cap });
        }
        movers
    }

    /// Indicator movers for groups not yet assigned, relaxed to [0, 1] with
    /// the group sums dropped — used only for the branch-and-bound bound.
    fn relaxed_indicator_movers(&self, theta: &[f64], from_group: usize) -> Vec<Mover> {
        let mut movers = Vec::new();
        for g in &self.groups[from_group..] {
            for &k in &g.columns {
                // Indicator values are exactly 0 or 1 on a schema-valid row,
                // so only one movement direction exists.
                let dir = if self.x[k] == 0.0 { 1.0 } else { -1.0 };
                let rate = theta[k] * dir;
                if rate > 0.0 {
                    movers.push(Mover { column: k, dir, rate, weight: self.w[k], cap: 1.0 });
                }
            }
        }
        movers
    }

    /// Exact continuous completion for one categorical assignment: `row` has
    /// the assigned encodings written and continuous columns still at x.
    /// Returns (total extra cost, completed point).
    fn solve_leaf(&mut self, row: &[f64]) -> Result<Option<(f64, Vec<f64>)>, CfgenError> {
        self.evaluations += 1;
        if self.models.len() == 1 {
            let m = &self.models[0];
            let gap = self.epsilon - m.score(row);
            let movers = self.continuous_movers(&m.weights);
            Ok(greedy_fill(&movers, gap).map(|(cost, moves)| {
                let mut point = row.to_vec();
                for (idx, step) in moves {
                    point[movers[idx].column] += movers[idx].dir * step;
                }
                (cost, point)
            }))
        } else {
            self.solve_leaf_lp(row, &[])
        }
    }

    /// Continuous completion as an LP when several half-spaces must hold at
    /// once. `relaxed_cols` optionally adds the [0,1]-relaxed indicators of
    /// unassigned groups (bound computation); empty for an exact leaf.
    fn solve_leaf_lp(
        &mut self,
        row: &[f64],
        relaxed_cols: &[usize],
    ) -> Result<Option<(f64, Vec<f64>)>, CfgenError> {
        // Variables: u_j, v_j per continuous column (move up / down), then one
        // bounded mover per relaxed indicator column.
        let nc = self.cont.len();
        let nr = relaxed_cols.len();
        let nvars = 2 * nc + nr;
        let mut objective = vec![0.0; nvars];
        for (slot, &j) in self.cont.iter().enumerate() {
            objective[slot] = self.w[j];
            objective[nc + slot] = self.w[j];
        }
        for (slot, &k) in relaxed_cols.iter().enumerate() {
            objective[2 * nc + slot] = self.w[k];
        }
        let mut rows = Vec::new();
        for m in self.models {
            let mut coeffs = vec![0.0; nvars];
            for (slot, &j) in self.cont.iter().enumerate() {
                coeffs[slot] = m.weights[j];
                coeffs[nc + slot] = -m.weights[j];
            }
            for (slot, &k) in relaxed_cols.iter().enumerate() {
                let dir = if self.x[k] == 0.0 { 1.0 } else { -1.0 };
                coeffs[2 * nc + slot] = m.weights[k] * dir;
            }
            rows.push((coeffs, LpRelation::Ge, self.epsilon - m.score(row)));
        }
        for (slot, &j) in self.cont.iter().enumerate() {
            if let Some((lo, hi)) = self.schema.bounds(j) {
                let mut up = vec![0.0; nvars];
                up[slot] = 1.0;
                rows.push((up, LpRelation::Le, hi - self.x[j]));
                let mut down = vec![0.0; nvars];
                down[nc + slot] = 1.0;
                rows.push((down, LpRelation::Le, self.x[j] - lo));
            }
        }
        for slot in 0..nr {
            let mut cap = vec![0.0; nvars];
            cap[2 * nc + slot] = 1.0;
            rows.push((cap, LpRelation::Le, 1.0));
        }
        match solve_lp(&LpProblem { objective, rows })? {
            LpOutcome::Infeasible => Ok(None),
            LpOutcome::Unbounded => Err(CfgenError::LpFailure {
                what: "nonnegative-cost subproblem reported unbounded".into(),
            }),
            LpOutcome::Optimal { z, cost } => {
                let mut point = row.to_vec();
                for (slot, &j) in self.cont.iter().enumerate() {
                    point[j] += z[slot] - z[nc + slot];
                }
                // Relaxed indicator movements are bound-only; they are never
                // materialized into a returned point.
                Ok(Some((cost, point)))
            }
        }
    }

    /// Lower bound for completing a partial assignment (groups before
    /// `from_group` already written into `row`). Infinite when even the
    /// relaxation is infeasible.
    fn relaxation_bound(&mut self, row: &[f64], from_group: usize) -> Result<f64, CfgenError> {
        if self.models.len() == 1 {
            let m = &self.models[0];
            let gap = self.epsilon - m.score(row);
            let mut movers = self.continuous_movers(&m.weights);
            movers.extend(self.relaxed_indicator_movers(&m.weights, from_group));
            Ok(greedy_fill(&movers, gap).map_or(f64::INFINITY, |(cost, _)| cost))
        } else {
            let relaxed: Vec<usize> = self.groups[from_group..]
                .iter()
                .flat_map(|g| g.columns.iter().copied())
                .collect();
            Ok(self.solve_leaf_lp(row, &relaxed)?.map_or(f64::INFINITY, |(cost, _)| cost))
        }
    }

    fn offer(&mut self, cat_cost: f64, solved: Option<(f64, Vec<f64>)>) {
        if let Some((cont_cost, point)) = solved {
            let total = cat_cost + cont_cost;
            if self.best.as_ref().is_none_or(|(bc, _)| total < *bc) {
                self.best = Some((total, point));
            }
        }
    }

    /// Exhaustive odometer over every categorical assignment.
    fn enumerate_all(&mut self) -> Result<(), CfgenError> {
        let mut row = self.x.to_vec();
        let n_groups = self.groups.len();
        let mut combo = vec![0usize; n_groups];
        loop {
            let mut cat_cost = 0.0;
            for (g, &c) in combo.iter().enumerate() {
                let (cost, values) = &self.groups[g].options[c];
                cat_cost += cost;
                for (slot, &col) in self.groups[g].columns.iter().enumerate() {
                    row[col] = values[slot];
                }
            }
            let solved = self.solve_leaf(&row)?;
            self.offer(cat_cost, solved);
            // Advance the odometer.
            let mut g = 0;
            loop {
                if g == n_groups {
                    return Ok(());
                }
                combo[g] += 1;
                if combo[g] < self.groups[g].options.len() {
                    break;
                }
                combo[g] = 0;
                g += 1;
            }
        }
    }

    /// Depth-first branch and bound over the groups, trying each group's
    /// original category first so a good incumbent appears early.
    fn branch_and_bound(&mut self, g: usize, row: &mut Vec<f64>, cat_cost: f64) -> Result<(), CfgenError> {
        if g == self.groups.len() {
            let solved = self.solve_leaf(row)?;
            self.offer(cat_cost, solved);
            return Ok(());
        }
        if let Some(best_cost) = self.best.as_ref().map(|(c, _)| *c) {
            let bound = cat_cost + self.relaxation_bound(row, g)?;
            if bound >= best_cost - PRUNE_TOL {
                return Ok(());
            }
        }
        let original = self.groups[g].original;
        let n_options = self.groups[g].options.len();
        let order = std::iter::once(original).chain((0..n_options).filter(|&c| c != original));
        let saved: Vec<f64> = self.groups[g].columns.iter().map(|&col| row[col]).collect();
        for c in order {
            let (flip_cost, values) = {
                let opt = &self.groups[g].options[c];
                (opt.0, opt.1.clone())
            };
            for (slot, &col) in self.groups[g].columns.iter().enumerate() {
                row[col] = values[slot];
            }
            self.branch_and_bound(g + 1, row, cat_cost + flip_cost)?;
        }
        for (slot, &col) in self.groups[g].columns.iter().enumerate() {
            row[col] = saved[slot];
        }
        Ok(())
    }
}

/// Iterate all size-k index combinations of 0..n in lexicographic order.
fn for_each_combination(
    n: usize,
    k: usize,
    mut f: impl FnMut(&[usize]) -> Result<(), CfgenError>,
) -> Result<(), CfgenError> {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx)?;
        // Advance: find the rightmost index that can still move up.
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            if idx[i] < n - (k - i) {
                idx[i] += 1;
                for j in (i + 1)..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut out: u128 = 1;
    for i in 0..k {
        out = out.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    out
}

/// Count of satisfied margins at a point.
fn satisfied_at(models: &[LinearModel], epsilon: f64, p: &[f64]) -> usize {
    models.iter().filter(|m| m.score(p) >= epsilon).count()
}

/// Shared driver: minimize the weighted ℓ1 cost subject to the margin holding
/// for at least `needed` of `models`, over categorical assignments and
/// continuous box moves.
#[allow(clippy::too_many_arguments)]
fn solve_chance(
    models: &[LinearModel],
    needed: usize,
    id: u64,
    x: &[f64],
    w: &WeightVector,
    schema: &FeatureSchema,
    cfg: &CeSearchConfig,
    method: &str,
) -> Result<Counterfactual, CfgenError> {
    let d = schema.n_columns();
    if x.len() != d {
        return Err(CfgenError::DimensionMismatch { want: d, got: x.len() });
    }
    if w.w.len() != d {
        return Err(CfgenError::DimensionMismatch { want: d, got: w.w.len() });
    }
    for m in models {
        if m.weights.len() != d {
            return Err(CfgenError::DimensionMismatch { want: d, got: m.weights.len() });
        }
    }

    // Already past the margin: the optimum is the instance itself.
    if satisfied_at(models, cfg.epsilon_margin, x) >= needed {
        return Ok(Counterfactual {
            id,
            original: x.to_vec(),
            point: x.to_vec(),
            method: method.to_string(),
            valid: true,
            cost: 0.0,
            evaluations: 1,
            reason: None,
        });
    }

    // Prepare the categorical groups: per category, the encoded values and
    // the flip cost from the original row.
    let mut groups = Vec::new();
    let mut combos: u128 = 1;
    for g in 0..schema.groups.len() {
        let columns = schema.groups[g].columns.clone();
        let original = schema.decode_category(g, x)?;
        let mut options = Vec::new();
        for c in 0..schema.groups[g].n_categories() {
            let mut buffer = x.to_vec();
            schema.encode_category(g, c, &mut buffer)?;
            let values: Vec<f64> = columns.iter().map(|&col| buffer[col]).collect();
            let cost: f64 = columns.iter().map(|&col| w.w[col] * (buffer[col] - x[col]).abs()).sum();
            options.push((cost, values));
        }
        combos = combos.saturating_mul(options.len() as u128);
        groups.push(CatGroup { columns, original, options });
    }

    let mut search = Search {
        models,
        x,
        w: &w.w,
        schema,
        epsilon: cfg.epsilon_margin,
        groups,
        cont: schema.continuous_indices(),
        evaluations: 0,
        best: None,
    };

    if needed == models.len() {
        if combos <= ENUMERATION_CAP {
            search.enumerate_all()?;
        } else {
            let mut row = x.to_vec();
            search.branch_and_bound(0, &mut row, 0.0)?;
        }
    } else {
        // Partial quantile: a point satisfying at least `needed` of the draws
        // satisfies all draws in some subset of that size, so the exact
        // optimum is the minimum over size-`needed` subsets. Enumeration
        // only; guarded by hard caps.
        if combos > ENUMERATION_CAP {
            return Err(CfgenError::PartialQuantileNeedsEnumeration { combos, cap: ENUMERATION_CAP });
        }
        let subsets = binomial(models.len(), needed);
        if subsets > SUBSET_CAP {
            return Err(CfgenError::TooManySubsets {
                quantile: needed as f64 / models.len() as f64,
                samples: models.len(),
                subsets,
                cap: SUBSET_CAP,
            });
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut evaluations = 0u64;
        for_each_combination(models.len(), needed, |subset| {
            let chosen: Vec<LinearModel> = subset.iter().map(|&i| models[i].clone()).collect();
            let mut sub = Search {
                models: &chosen,
                x,
                w: &w.w,
                schema,
                epsilon: cfg.epsilon_margin,
                groups: std::mem::take(&mut search.groups),
                cont: search.cont.clone(),
                evaluations: 0,
                best: None,
            };
            sub.enumerate_all()?;
            evaluations += sub.evaluations;
            if let Some((cost, point)) = sub.best {
                if best.as_ref().is_none_or(|(bc, _)| cost < *bc) {
                    best = Some((cost, point));
                }
            }
            search.groups = sub.groups;
            Ok(())
        })?;
        search.best = best;
        search.evaluations = evaluations;
    }

    let evaluations = search.evaluations;
    match search.best {
        Some((_, point)) => {
            let cost = weighted_l1(x, &point, w).map_err(|e| CfgenError::LpFailure { what: e.to_string() })?;
            Ok(Counterfactual {
                id,
                original: x.to_vec(),
                point,
                method: method.to_string(),
                valid: true,
                cost,
                evaluations,
                reason: None,
            })
        }
        None => Ok(Counterfactual::invalid(
            id,
            x,
            method,
            evaluations,
            "decision boundary unreachable within bounds and categorical assignments",
        )),
    }
}

//! Dense two-phase simplex for the small linear programs that arise when a
//! margin constraint must hold across several posterior draws at once.
//!
//! Problems here are tiny (tens of variables, tens of rows), so a plain
//! tableau with Bland's anti-cycling rule is both simple and fast enough.

use super::CfgenError;

/// Row sense of one linear constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpRelation {
    Le,
    Ge,
    Eq,
}

/// Minimize `objective · z` subject to `rows`, with every variable `z_j ≥ 0`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub rows: Vec<(Vec<f64>, LpRelation, f64)>,
}

/// Solver verdict.
#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { z: Vec<f64>, cost: f64 },
    Infeasible,
    Unbounded,
}

const TOL: f64 = 1e-9;

/// One simplex pass over the tableau with Bland's rule. `tableau` is
/// m×(n+1) with the right-hand side in the last column; `obj` is the reduced
/// cost row (length n+1, last entry the negated objective value); `basis[i]`
/// is the variable basic in row i. Returns false when unbounded.
fn run_simplex(tableau: &mut [Vec<f64>], obj: &mut [f64], basis: &mut [usize]) -> bool {
    let m = tableau.len();
    let n = obj.len() - 1;
    loop {
        // Bland: entering variable = smallest index with negative reduced cost.
        let Some(enter) = (0..n).find(|&j| obj[j] < -TOL) else {
            return true;
        };
        // Ratio test; ties broken by smallest basic variable index (Bland).
        let mut pivot_row: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let a = tableau[i][enter];
            if a > TOL {
                let ratio = tableau[i][n] / a;
                let better = match pivot_row {
                    None => true,
                    Some(r) => {
                        ratio < best_ratio - TOL || (ratio < best_ratio + TOL && basis[i] < basis[r])
                    }
                };
                if better {
                    pivot_row = Some(i);
                    best_ratio = ratio.min(best_ratio);
                }
            }
        }
        let Some(r) = pivot_row else {
            return false;
        };
        // Pivot on (r, enter).
        let piv = tableau[r][enter];
        for v in tableau[r].iter_mut() {
            *v /= piv;
        }
        let pivot_vals = tableau[r].clone();
        for (i, row) in tableau.iter_mut().enumerate() {
            if i != r {
                let factor = row[enter];
                if factor != 0.0 {
                    for (v, p) in row.iter_mut().zip(&pivot_vals) {
                        *v -= factor * p;
                    }
                }
            }
        }
        let factor = obj[enter];
        if factor != 0.0 {
            for (v, p) in obj.iter_mut().zip(&pivot_vals) {
                *v -= factor * p;
            }
        }
        basis[r] = enter;
    }
}

/// Rebuild the reduced-cost row for cost vector `c` under the current basis.
fn reduced_costs(tableau: &[Vec<f64>], basis: &[usize], c: &[f64], n_total: usize) -> Vec<f64> {
    let mut obj = vec![0.0; n_total + 1];
    obj[..c.len()].copy_from_slice(c);
    for (i, &b) in basis.iter().enumerate() {
        let cb = if b < c.len() { c[b] } else { 0.0 };
        if cb != 0.0 {
            for (o, t) in obj.iter_mut().zip(&tableau[i]) {
                *o -= cb * t;
            }
        }
    }
    obj
}

/// Solve the LP exactly (to the solver tolerance of 1e-9).
pub fn solve_lp(p: &LpProblem) -> Result<LpOutcome, CfgenError> {
    let n = p.objective.len();
    let m = p.rows.len();
    for (i, (coeffs, _, _)) in p.rows.iter().enumerate() {
        if coeffs.len() != n {
            return Err(CfgenError::LpFailure {
                what: format!("row {i} has {} coefficients, expected {n}", coeffs.len()),
            });
        }
    }
    if m == 0 {
        // No constraints: minimum of a nonnegative-orthant LP is at zero when
        // all costs are nonnegative, otherwise unbounded.
        if p.objective.iter().any(|&c| c < -TOL) {
            return Ok(LpOutcome::Unbounded);
        }
        return Ok(LpOutcome::Optimal { z: vec![0.0; n], cost: 0.0 });
    }

    // Normalize rows so every right-hand side is nonnegative, then add one
    // slack or surplus per inequality and artificials where no natural basic
    // column exists.
    let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut relations = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for (row, rel, b) in &p.rows {
        if *b < 0.0 {
            coeffs.push(row.iter().map(|v| -v).collect());
            relations.push(match rel {
                LpRelation::Le => LpRelation::Ge,
                LpRelation::Ge => LpRelation::Le,
                LpRelation::Eq => LpRelation::Eq,
            });
            rhs.push(-b);
        } else {
            coeffs.push(row.clone());
            relations.push(*rel);
            rhs.push(*b);
        }
    }
    let n_slack = relations.iter().filter(|r| **r != LpRelation::Eq).count();
    let n_artificial = relations.iter().filter(|r| **r != LpRelation::Le).count();
    let n_total = n + n_slack + n_artificial;

    let mut tableau: Vec<Vec<f64>> = vec![vec![0.0; n_total + 1]; m];
    let mut basis = vec![0usize; m];
    let mut slack_at = n;
    let mut art_at = n + n_slack;
    let mut artificial_cols = Vec::new();
    for i in 0..m {
        tableau[i][..n].copy_from_slice(&coeffs[i]);
        tableau[i][n_total] = rhs[i];
        match relations[i] {
            LpRelation::Le => {
                tableau[i][slack_at] = 1.0;
                basis[i] = slack_at;
                slack_at += 1;
            }
            LpRelation::Ge => {
                tableau[i][slack_at] = -1.0;
                slack_at += 1;
                tableau[i][art_at] = 1.0;
                basis[i] = art_at;
                artificial_cols.push(art_at);
                art_at += 1;
            }
            LpRelation::Eq => {
                tableau[i][art_at] = 1.0;
                basis[i] = art_at;
                artificial_cols.push(art_at);
                art_at += 1;
            }
        }
    }

    // Phase 1: minimize the artificial sum.
    if !artificial_cols.is_empty() {
        let mut phase1_cost = vec![0.0; n_total];
        for &a in &artificial_cols {
            phase1_cost[a] = 1.0;
        }
        let mut obj = reduced_costs(&tableau, &basis, &phase1_cost, n_total);
        if !run_simplex(&mut tableau, &mut obj, &mut basis) {
            return Err(CfgenError::LpFailure { what: "phase-1 subproblem reported unbounded".into() });
        }
        let phase1_value = -obj[n_total];
        if phase1_value > 1e-7 {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive any artificial still basic (at value 0) out of the basis.
        for i in 0..m {
            if artificial_cols.contains(&basis[i]) {
                if let Some(j) = (0..n + n_slack).find(|&j| tableau[i][j].abs() > TOL) {
                    let piv = tableau[i][j];
                    for v in tableau[i].iter_mut() {
                        *v /= piv;
                    }
                    let pivot_vals = tableau[i].clone();
                    for (k, row) in tableau.iter_mut().enumerate() {
                        if k != i {
                            let factor = row[j];
                            if factor != 0.0 {
                                for (v, pv) in row.iter_mut().zip(&pivot_vals) {
                                    *v -= factor * pv;
                                }
                            }
                        }
                    }
                    basis[i] = j;
                }
                // A row with no eligible pivot is redundant; the artificial
                // stays basic at zero, which is harmless in phase 2 because
                // its column is never allowed to enter again.
            }
        }
        // Forbid artificial columns from re-entering by zeroing them.
        for row in tableau.iter_mut() {
            for &a in &artificial_cols {
                row[a] = 0.0;
            }
        }
        for (i, &b) in basis.iter().enumerate() {
            if artificial_cols.contains(&b) {
                tableau[i][b] = 1.0;
            }
        }
    }

    // Phase 2: minimize the real objective.
    let mut phase2_cost = vec![0.0; n_total];
    phase2_cost[..n].copy_from_slice(&p.objective);
    let mut obj = reduced_costs(&tableau, &basis, &phase2_cost, n_total);
    if !run_simplex(&mut tableau, &mut obj, &mut basis) {
        return Ok(LpOutcome::Unbounded);
    }
    let mut z = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            z[b] = tableau[i][n_total];
        }
    }
    let cost = p.objective.iter().zip(&z).map(|(c, v)| c * v).sum();
    Ok(LpOutcome::Optimal { z, cost })
}

//! One-sided Wilcoxon signed-rank test with zero differences handled by the
//! Pratt method, plus the matched rank-biserial effect size.
//!
//! Zeros are ranked together with the nonzero differences (ties share their
//! average rank) and then dropped from the statistic, so a zero still pushes
//! the ranks of larger differences upward. The null distribution conditions
//! on the observed ranks: every assignment of signs to the nonzero
//! differences is equally likely. For small samples the tail probability is
//! computed exactly; larger samples use a normal approximation whose variance
//! is taken from the realized (tie-averaged) ranks and which applies a 0.5
//! continuity correction.

use statrs::distribution::{ContinuousCDF, Normal};

use super::StatsError;

/// Largest number of nonzero differences for which the exact null
/// distribution is enumerated; beyond this the normal approximation is used.
const EXACT_LIMIT: usize = 25;

/// Outcome of the one-sided signed-rank test.
#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of the ranks of the positive differences (`W+`).
    pub statistic: f64,
    /// One-sided p-value for the alternative "x tends to be larger than y".
    pub p_value: f64,
    /// Whether the p-value came from the exact null distribution.
    pub exact: bool,
    /// True when every difference is zero; the test is then uninformative
    /// and the p-value is 1.
    pub degenerate: bool,
}

/// Ranks the absolute differences (zeros included, ties averaged) and
/// returns the ranks of the nonzero entries paired with the sign of the
/// difference: `(rank, is_positive)`.
fn pratt_signed_ranks(diffs: &[f64]) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&a, &b| {
        diffs[a]
            .abs()
            .partial_cmp(&diffs[b].abs())
            .expect("differences must not be NaN")
    });

    let mut ranks = vec![0.0; diffs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && diffs[order[end]].abs() == diffs[order[start]].abs() {
            end += 1;
        }
        // Positions start+1 ..= end (1-based) share their average rank.
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }

    diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d != 0.0)
        .map(|(d, &r)| (r, *d > 0.0))
        .collect()
}

/// Exact tail probability `P(W+ >= observed)` under random signs, computed
/// by counting sign assignments. Ranks are doubled so that tie-averaged
/// half-integer ranks become integers; the count for each achievable doubled
/// sum is built up one rank at a time, which reproduces the distribution of
/// the full 2^n enumeration without materializing it.
fn exact_tail(ranks: &[f64], observed: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[s] = number of sign assignments among the ranks processed so
    // far whose positive-rank sum (doubled) equals s. Each rank either
    // joins the positive side (move to s + r) or the negative side (stay),
    // so the in-place descending update reads only not-yet-updated cells.
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (0..=total - r).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
    }
    let threshold = (2.0 * observed).round() as usize;
    let tail: u64 = counts[threshold.min(total)..].iter().sum();
    let all: u64 = 1u64 << doubled.len();
    tail as f64 / all as f64
}

/// One-sided Wilcoxon signed-rank test of paired samples, alternative
/// "x tends to be larger than y". Zero differences are handled by the Pratt
/// method. With at most 25 nonzero differences the p-value is exact;
/// otherwise a normal approximation with tie-aware variance and a 0.5
/// continuity correction is used. All differences zero yields the degenerate
/// result `p = 1`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::BadParam { what: "differences must be finite".into() });
    }

    let signed = pratt_signed_ranks(&diffs);
    if signed.is_empty() {
        return Ok(WilcoxonResult { statistic: 0.0, p_value: 1.0, exact: true, degenerate: true });
    }

    let w_plus: f64 = signed.iter().filter(|(_, pos)| *pos).map(|(r, _)| r).sum();
    let ranks: Vec<f64> = signed.iter().map(|(r, _)| *r).collect();

    if ranks.len() <= EXACT_LIMIT {
        let p = exact_tail(&ranks, w_plus);
        return Ok(WilcoxonResult { statistic: w_plus, p_value: p, exact: true, degenerate: false });
    }

    // Normal approximation conditioned on the realized ranks: under random
    // signs E[W+] = sum(r)/2 and Var[W+] = sum(r^2)/4, which already absorbs
    // both the tie averaging and the Pratt zero handling.
    let mean: f64 = ranks.iter().sum::<f64>() / 2.0;
    let var: f64 = ranks.iter().map(|r| r * r).sum::<f64>() / 4.0;
    let z = (w_plus - mean - 0.5) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = (1.0 - normal.cdf(z)).clamp(0.0, 1.0);
    Ok(WilcoxonResult { statistic: w_plus, p_value: p, exact: false, degenerate: false })
}

/// Rank-biserial correlation for paired samples: `(W+ - W-) / (W+ + W-)`
/// over the signed ranks of the nonzero differences (zeros ranked by the
/// Pratt method, then dropped). Positive values mean x tends to exceed y.
/// All differences zero yields 0.
pub fn rank_biserial(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::BadParam { what: "differences must be finite".into() });
    }
    let signed = pratt_signed_ranks(&diffs);
    let w_plus: f64 = signed.iter().filter(|(_, pos)| *pos).map(|(r, _)| r).sum();
    let w_minus: f64 = signed.iter().filter(|(_, pos)| !*pos).map(|(r, _)| r).sum();
    if w_plus + w_minus == 0.0 {
        return Ok(0.0);
    }
    Ok((w_plus - w_minus) / (w_plus + w_minus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: enumerate all 2^n sign assignments of the nonzero
    /// ranks and count those with W+ at least the observed value.
    fn brute_force_p(diffs: &[f64]) -> f64 {
        let signed = pratt_signed_ranks(diffs);
        let ranks: Vec<f64> = signed.iter().map(|(r, _)| *r).collect();
        let observed: f64 = signed.iter().filter(|(_, pos)| *pos).map(|(r, _)| r).sum();
        let n = ranks.len();
        assert!(n <= 20, "oracle is exponential");
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|j| mask >> j & 1 == 1).map(|j| ranks[j]).sum();
            if w >= observed - 1e-12 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn all_positive_differences_of_five_pairs() {
        let x = [2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [1.0, 1.0, 1.0, 1.0, 1.0];
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(r.statistic, 15.0);
        assert!((r.p_value - 1.0 / 32.0).abs() < 1e-15);
        assert!(r.exact);
        assert!(!r.degenerate);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let x = [1.0, 2.0, 3.0];
        let r = wilcoxon_signed_rank(&x, &x).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn exact_tail_matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..50 {
            let n = rng.random_range(3..=12);
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let b: f64 = rng.random_range(-3.0..3.0);
                // Quantize so that ties and zeros occur often.
                let d = (rng.random_range(-2.0f64..2.5)).round() * 0.5;
                x.push(b + d);
                y.push(b);
            }
            let diffs: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            if diffs.iter().all(|d| *d == 0.0) {
                continue;
            }
            let r = wilcoxon_signed_rank(&x, &y).unwrap();
            let oracle = brute_force_p(&diffs);
            assert!(
                (r.p_value - oracle).abs() < 1e-12,
                "case {case}: got {} want {} for diffs {:?}",
                r.p_value,
                oracle,
                diffs
            );
            assert!(r.exact);
        }
    }

    #[test]
    fn zeros_shift_ranks_per_pratt() {
        // Differences: 0, 0, 1, -2. Ranked |d| including zeros: zeros share
        // rank 1.5, then 3 and 4. Nonzero ranks are 3 (positive) and 4
        // (negative): W+ = 3, and the exact tail over 4 sign assignments
        // with W+ >= 3 is {(+,-): 3, (+,+): 7, (-,+): 4} => 3/4.
        let x = [5.0, 6.0, 8.0, 1.0];
        let y = [5.0, 6.0, 7.0, 3.0];
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(r.statistic, 3.0);
        assert!((r.p_value - 0.75).abs() < 1e-15);
    }

    #[test]
    fn monotone_transform_leaves_exact_p_unchanged() {
        let x = [1.4, 0.2, 3.0, 2.2, 0.9, 1.1, 0.5];
        let y = [0.9, 0.4, 1.0, 2.9, 0.9, 0.3, 0.6];
        let base = wilcoxon_signed_rank(&x, &y).unwrap();
        // Scale both samples' differences by applying an odd, strictly
        // increasing map to the differences (here: d -> 2d and d -> d^3
        // preserving sign), which preserves signs and the rank order of |d|.
        let d3 = |a: f64, b: f64| {
            let d: f64 = a - b;
            d.signum() * d.abs().powi(3)
        };
        let x2: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * (a - b)).collect();
        let y2 = vec![0.0; x.len()];
        let x3: Vec<f64> = x.iter().zip(&y).map(|(a, b)| d3(*a, *b)).collect();
        let scaled = wilcoxon_signed_rank(&x2, &y2).unwrap();
        let cubed = wilcoxon_signed_rank(&x3, &y2).unwrap();
        assert_eq!(base.p_value, scaled.p_value);
        assert_eq!(base.p_value, cubed.p_value);
        assert_eq!(base.statistic, scaled.statistic);
        assert_eq!(base.statistic, cubed.statistic);
    }

    #[test]
    fn sign_flip_consistency() {
        // For a symmetric null, P(W >= w) for d and for -d must add up to
        // 1 + P(W = w). Verify through the brute-force enumeration.
        let x = [1.0, 3.5, 0.25, 2.0, 5.0, 1.25, 0.75, 2.5];
        let y = [2.0, 1.0, 1.0, 0.5, 4.0, 3.25, 0.25, 2.75];
        let diffs: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let neg_x: Vec<f64> = y.to_vec();
        let neg_y: Vec<f64> = x.to_vec();
        let p_pos = wilcoxon_signed_rank(&x, &y).unwrap().p_value;
        let p_neg = wilcoxon_signed_rank(&neg_x, &neg_y).unwrap().p_value;

        // Point mass at the observed statistic, from enumeration.
        let signed = pratt_signed_ranks(&diffs);
        let ranks: Vec<f64> = signed.iter().map(|(r, _)| *r).collect();
        let observed: f64 = signed.iter().filter(|(_, pos)| *pos).map(|(r, _)| r).sum();
        let n = ranks.len();
        let mut at = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|j| mask >> j & 1 == 1).map(|j| ranks[j]).sum();
            if (w - observed).abs() < 1e-12 {
                at += 1;
            }
        }
        let p_at = at as f64 / (1u64 << n) as f64;
        assert!((p_pos + p_neg - 1.0 - p_at).abs() < 1e-12);
    }

    #[test]
    fn normal_approximation_tracks_the_exact_distribution() {
        // 60 nonzero differences: public behavior switches to the normal
        // approximation, and the exact tail (still computable by the rank
        // counting scheme) must be close to it.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let diffs: Vec<f64> =
            (0..60).map(|_| rng.random_range(-1.0f64..1.4).round() * 0.25 + 0.125).collect();
        let y = vec![0.0; diffs.len()];
        let r = wilcoxon_signed_rank(&diffs, &y).unwrap();
        assert!(!r.exact);

        let signed = pratt_signed_ranks(&diffs);
        let ranks: Vec<f64> = signed.iter().map(|(rk, _)| *rk).collect();
        let observed: f64 = signed.iter().filter(|(_, pos)| *pos).map(|(rk, _)| rk).sum();
        let exact = exact_tail(&ranks, observed);
        assert!(
            (r.p_value - exact).abs() < 0.01,
            "normal {} vs exact {}",
            r.p_value,
            exact
        );
    }

    #[test]
    fn rank_biserial_extremes_and_oracle() {
        let x = [2.0, 3.0, 4.0];
        let y = [1.0, 1.0, 1.0];
        assert_eq!(rank_biserial(&x, &y).unwrap(), 1.0);
        assert_eq!(rank_biserial(&y, &x).unwrap(), -1.0);
        assert_eq!(rank_biserial(&x, &x).unwrap(), 0.0);

        // Mixed case computed by hand: diffs 2, -1, 0.5, -0.25.
        // |d| ranks: 0.25 -> 1, 0.5 -> 2, 1 -> 3, 2 -> 4.
        // W+ = 4 + 2 = 6, W- = 3 + 1 = 4, r = 2/10.
        let a = [3.0, 0.0, 1.5, 0.75];
        let b = [1.0, 1.0, 1.0, 1.0];
        assert!((rank_biserial(&a, &b).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_and_empty_are_rejected() {
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]),
            Err(StatsError::LengthMismatch { .. })
        ));
        assert!(matches!(wilcoxon_signed_rank(&[], &[]), Err(StatsError::EmptyInput)));
        assert!(matches!(
            rank_biserial(&[1.0], &[1.0, 2.0]),
            Err(StatsError::LengthMismatch { .. })
        ));
    }
}

//! Comparative statistics for paired robustness records: the Wilcoxon
//! signed-rank test (exact for small samples), the rank-biserial effect size,
//! a Bayesian Student-T estimate of which method is ahead, and the driver
//! that assembles per-method comparison rows against the most robust
//! reference method.

mod compare;
mod posterior;
mod wilcoxon;

pub use compare::{compare_methods, ComparisonResult, MethodComparison, MethodRecords};
pub use posterior::{posterior_p_best, McmcConfig, PosteriorSummary};
pub use wilcoxon::{rank_biserial, wilcoxon_signed_rank, WilcoxonResult};

use thiserror::Error;

/// Errors from the statistics layer.
#[derive(Debug, Error)]
pub enum StatsError {
    #[error("paired samples differ in length: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("empty sample")]
    EmptyInput,
    #[error("need at least {want} paired differences, got {got}")]
    TooFewDiffs { want: usize, got: usize },
    #[error("invalid parameter: {what}")]
    BadParam { what: String },
}

/// Significance stars for a one-sided p-value: thresholds 0.001 / 0.01 /
/// 0.05. NaN (an undefined test) maps to the empty string.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

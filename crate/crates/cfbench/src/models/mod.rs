//! In-house classifiers: regularized logistic regression, its Bayesian
//! (Laplace-approximated) counterpart, a bagged random forest, and a small
//! MLP. All expose calibrated-ish probabilities through one trait so the
//! counterfactual searches can stay model-agnostic.
//!
//! Convention throughout: a probability of exactly 0.5 predicts class 1.

mod bayes;
mod forest;
mod logistic;
mod mlp;

pub use bayes::{fit_bayes_logistic, neg_log_posterior_grad, neg_log_posterior_hessian, BayesianLinearModel};
pub use forest::{fit_random_forest, RandomForest};
pub use logistic::{fit_logistic, logistic_loss_grad, LinearModel};
pub use mlp::{fit_mlp, Mlp, MlpConfig};

use thiserror::Error;

use crate::data::Dataset;

/// Errors raised while fitting or evaluating models.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data is empty")]
    EmptyData,
    #[error("training data contains only class {class}; need both classes")]
    SingleClass { class: u8 },
    #[error("invalid parameter: {what}")]
    BadParam { what: String },
    #[error("training diverged at epoch {epoch}: loss became non-finite")]
    Divergence { epoch: usize },
    #[error("optimizer failed to converge: gradient norm {grad_norm}")]
    NoConvergence { grad_norm: f64 },
    #[error("linear algebra failure: {what}")]
    Linalg { what: String },
}

/// A binary probabilistic classifier over feature rows.
pub trait Classifier: Send + Sync {
    /// Probability of class 1.
    fn predict_proba(&self, x: &[f64]) -> f64;

    /// Hard prediction; ties at exactly 0.5 go to class 1.
    fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.predict_proba(x) >= 0.5)
    }

    /// Short tag for tables ("lr", "blr", "rf", "nn").
    fn tag(&self) -> &'static str;
}

/// Numerically stable sigmoid.
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Stable log(1 + e^z).
pub(crate) fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn check_two_classes(d: &Dataset) -> Result<(), ModelError> {
    if d.n() == 0 {
        return Err(ModelError::EmptyData);
    }
    let first = d.y[0];
    if d.y.iter().all(|&y| y == first) {
        return Err(ModelError::SingleClass { class: first });
    }
    Ok(())
}

/// Fraction of instances whose hard prediction matches the label.
pub fn accuracy(m: &dyn Classifier, d: &Dataset) -> Result<f64, ModelError> {
    if d.n() == 0 {
        return Err(ModelError::EmptyData);
    }
    let correct = (0..d.n()).filter(|&i| m.predict(&d.x[i]) == d.y[i]).count();
    Ok(correct as f64 / d.n() as f64)
}

/// Instance ids partitioned by the confusion quadrant of a model on a
/// dataset. The predicted-negative side (TN ∪ FN) is the counterfactual
/// generation population.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfusionSplit {
    pub true_neg: Vec<u64>,
    pub false_neg: Vec<u64>,
    pub true_pos: Vec<u64>,
    pub false_pos: Vec<u64>,
}

/// Partition instance ids by (label, prediction).
pub fn confusion_split(m: &dyn Classifier, d: &Dataset) -> ConfusionSplit {
    let mut split = ConfusionSplit::default();
    for i in 0..d.n() {
        let pred = m.predict(&d.x[i]);
        let id = d.ids[i];
        match (d.y[i], pred) {
            (0, 0) => split.true_neg.push(id),
            (1, 0) => split.false_neg.push(id),
            (1, 1) => split.true_pos.push(id),
            (_, _) => split.false_pos.push(id),
        }
    }
    split
}

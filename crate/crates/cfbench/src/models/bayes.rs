//! Bayesian logistic regression via the Laplace approximation: the posterior
//! is approximated as a Gaussian centered at the MAP estimate with
//! covariance equal to the inverse Hessian of the negative log-posterior.
//!
//! The Gaussian prior `N(0, prior_variance·I)` covers the weights; the bias
//! gets a flat prior, which makes the MAP coincide exactly with
//! [`fit_logistic`] at `l2 = 1/(n·prior_variance)`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{fit_logistic, sigmoid, Classifier, LinearModel, ModelError};
use crate::data::Dataset;

/// Laplace-approximated posterior over (weights..., bias).
#[derive(Debug, Clone, PartialEq)]
pub struct BayesianLinearModel {
    /// MAP estimate, length d+1 with the bias last.
    pub posterior_mean: Vec<f64>,
    /// Inverse Hessian of the negative log-posterior at the MAP, (d+1)².
    pub posterior_cov: DMatrix<f64>,
    /// Set when the Hessian needed a ridge repair to invert.
    pub ridge_repaired: bool,
}

impl BayesianLinearModel {
    /// The plug-in model at the posterior mean.
    pub fn mean_model(&self) -> LinearModel {
        let d = self.posterior_mean.len() - 1;
        LinearModel { weights: self.posterior_mean[..d].to_vec(), bias: self.posterior_mean[d] }
    }

    /// Draw `s` models from the posterior Gaussian. For `s >= 2` the draws
    /// are re-centered so their sample mean equals the posterior mean
    /// exactly (moment matching); a single draw is returned raw.
    pub fn draw(&self, s: usize, seed: u64) -> Result<Vec<LinearModel>, ModelError> {
        if s == 0 {
            return Err(ModelError::BadParam { what: "draw count must be >= 1".into() });
        }
        let dim = self.posterior_mean.len();
        let chol = cholesky_with_jitter(&self.posterior_cov)
            .ok_or_else(|| ModelError::Linalg { what: "posterior covariance not factorizable".into() })?
            .0;
        let l = chol.l();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut raw: Vec<DVector<f64>> = Vec::with_capacity(s);
        for _ in 0..s {
            let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            raw.push(&l * z);
        }
        if s >= 2 {
            let mut mean = DVector::zeros(dim);
            for offset in &raw {
                mean += offset;
            }
            mean /= s as f64;
            for offset in raw.iter_mut() {
                *offset -= &mean;
            }
        }
        Ok(raw
            .into_iter()
            .map(|offset| {
                let theta: Vec<f64> = (0..dim).map(|j| self.posterior_mean[j] + offset[j]).collect();
                LinearModel { weights: theta[..dim - 1].to_vec(), bias: theta[dim - 1] }
            })
            .collect())
    }
}

impl Classifier for BayesianLinearModel {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        self.mean_model().predict_proba(x)
    }
    fn tag(&self) -> &'static str {
        "blr"
    }
}

/// Negative log-posterior (up to a constant) and its gradient at `theta`.
/// This is the function whose curvature defines the Laplace covariance;
/// exposed for finite-difference verification.
pub fn neg_log_posterior_grad(d: &Dataset, theta: &[f64], prior_variance: f64) -> (f64, Vec<f64>) {
    let dim = d.d();
    let (mut loss, mut grad) = super::logistic_loss_grad(d, theta, 0.0);
    let n = d.n() as f64;
    loss *= n;
    for g in grad.iter_mut() {
        *g *= n;
    }
    for j in 0..dim {
        loss += theta[j] * theta[j] / (2.0 * prior_variance);
        grad[j] += theta[j] / prior_variance;
    }
    (loss, grad)
}

/// Analytic Hessian of the negative log-posterior at `theta`.
pub fn neg_log_posterior_hessian(d: &Dataset, theta: &[f64], prior_variance: f64) -> DMatrix<f64> {
    let dim = d.d();
    let mut h = DMatrix::zeros(dim + 1, dim + 1);
    for i in 0..d.n() {
        let z: f64 = theta[..dim].iter().zip(&d.x[i]).map(|(w, v)| w * v).sum::<f64>() + theta[dim];
        let s = sigmoid(z);
        let weight = s * (1.0 - s);
        for a in 0..=dim {
            let xa = if a < dim { d.x[i][a] } else { 1.0 };
            for b in a..=dim {
                let xb = if b < dim { d.x[i][b] } else { 1.0 };
                h[(a, b)] += weight * xa * xb;
            }
        }
    }
    for a in 0..dim {
        h[(a, a)] += 1.0 / prior_variance;
    }
    for a in 0..dim + 1 {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    h
}

/// Cholesky with an escalating jitter ladder; returns the factorization and
/// whether any jitter was needed.
fn cholesky_with_jitter(m: &DMatrix<f64>) -> Option<(Cholesky<f64, nalgebra::Dyn>, bool)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some((c, false));
    }
    let scale = m.diagonal().amax().max(1.0);
    let mut jitter = 1e-10 * scale;
    for _ in 0..15 {
        let mut mj = m.clone();
        for a in 0..mj.nrows() {
            mj[(a, a)] += jitter;
        }
        if let Some(c) = Cholesky::new(mj) {
            return Some((c, true));
        }
        jitter *= 10.0;
    }
    None
}

/// Fit the Laplace approximation: MAP via the regularized logistic solver,
/// covariance via the inverse Hessian (ridge-repaired and flagged if the
/// Hessian is numerically singular).
pub fn fit_bayes_logistic(train: &Dataset, prior_variance: f64) -> Result<BayesianLinearModel, ModelError> {
    if !prior_variance.is_finite() || prior_variance <= 0.0 {
        return Err(ModelError::BadParam { what: format!("prior_variance must be > 0, got {prior_variance}") });
    }
    let l2 = 1.0 / (train.n().max(1) as f64 * prior_variance);
    let map = fit_logistic(train, l2)?;
    let mut theta = map.weights.clone();
    theta.push(map.bias);
    let h = neg_log_posterior_hessian(train, &theta, prior_variance);
    let (chol, repaired) = cholesky_with_jitter(&h)
        .ok_or_else(|| ModelError::Linalg { what: "posterior Hessian not invertible".into() })?;
    let cov = chol.inverse();
    Ok(BayesianLinearModel { posterior_mean: theta, posterior_cov: cov, ridge_repaired: repaired })
}

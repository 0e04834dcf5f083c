//! L2-regularized logistic regression fit by damped Newton iterations.
//!
//! Objective: mean log-loss plus `(l2/2)·‖weights‖²`; the bias is not
//! penalized. With both classes present and `l2 > 0` the objective is
//! strictly convex, so Newton with a backtracking line search converges to
//! machine precision in a handful of steps.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_two_classes, log1p_exp, sigmoid, Classifier, ModelError};
use crate::data::Dataset;

/// Gradient norm below which the fit is declared converged (well inside the
/// documented 1e-6 contract).
const GRAD_TOL: f64 = 1e-10;
const MAX_NEWTON_ITERS: usize = 200;

/// Linear decision function `score(x) = weights·x + bias`; probability of
/// class 1 is `sigmoid(score)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.weights.len());
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

impl Classifier for LinearModel {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }
    fn tag(&self) -> &'static str {
        "lr"
    }
}

/// Objective value and gradient of the regularized mean log-loss at `theta`
/// = (weights..., bias). Exposed so finite-difference checks can probe the
/// same function the optimizer uses.
pub fn logistic_loss_grad(d: &Dataset, theta: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let dim = d.d();
    debug_assert_eq!(theta.len(), dim + 1);
    let n = d.n() as f64;
    let (weights, bias) = (&theta[..dim], theta[dim]);
    let mut loss = 0.0;
    let mut grad = vec![0.0; dim + 1];
    for i in 0..d.n() {
        let z: f64 = weights.iter().zip(&d.x[i]).map(|(w, v)| w * v).sum::<f64>() + bias;
        let y = f64::from(d.y[i]);
        loss += log1p_exp(z) - y * z;
        let residual = sigmoid(z) - y;
        for j in 0..dim {
            grad[j] += residual * d.x[i][j];
        }
        grad[dim] += residual;
    }
    loss /= n;
    for g in grad.iter_mut() {
        *g /= n;
    }
    for j in 0..dim {
        loss += 0.5 * l2 * theta[j] * theta[j];
        grad[j] += l2 * theta[j];
    }
    (loss, grad)
}

fn hessian(d: &Dataset, theta: &[f64], l2: f64) -> DMatrix<f64> {
    let dim = d.d();
    let n = d.n() as f64;
    let mut h = DMatrix::zeros(dim + 1, dim + 1);
    for i in 0..d.n() {
        let z: f64 = theta[..dim].iter().zip(&d.x[i]).map(|(w, v)| w * v).sum::<f64>() + theta[dim];
        let s = sigmoid(z);
        let weight = (s * (1.0 - s)).max(1e-12) / n;
        for a in 0..=dim {
            let xa = if a < dim { d.x[i][a] } else { 1.0 };
            for b in a..=dim {
                let xb = if b < dim { d.x[i][b] } else { 1.0 };
                h[(a, b)] += weight * xa * xb;
            }
        }
    }
    for a in 0..dim {
        h[(a, a)] += l2;
    }
    // Mirror the upper triangle.
    for a in 0..dim + 1 {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    h
}

fn solve_newton_step(h: &DMatrix<f64>, grad: &[f64]) -> Result<DVector<f64>, ModelError> {
    let g = DVector::from_column_slice(grad);
    let mut jitter = 0.0;
    let scale = h.diagonal().amax().max(1.0);
    for _ in 0..12 {
        let mut hj = h.clone();
        if jitter > 0.0 {
            for a in 0..hj.nrows() {
                hj[(a, a)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(hj) {
            return Ok(chol.solve(&g));
        }
        jitter = if jitter == 0.0 { 1e-10 * scale } else { jitter * 10.0 };
    }
    Err(ModelError::Linalg { what: "Newton system not positive definite even after jitter".into() })
}

/// Fit by minimizing `mean log-loss + (l2/2)·‖weights‖²` to a gradient norm
/// of at most 1e-6 (in practice 1e-10). Requires both classes present.
pub fn fit_logistic(train: &Dataset, l2: f64) -> Result<LinearModel, ModelError> {
    if !l2.is_finite() || l2 < 0.0 {
        return Err(ModelError::BadParam { what: format!("l2 must be >= 0, got {l2}") });
    }
    check_two_classes(train)?;
    let dim = train.d();
    let mut theta = vec![0.0; dim + 1];
    let (mut loss, mut grad) = logistic_loss_grad(train, &theta, l2);
    for _ in 0..MAX_NEWTON_ITERS {
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm <= GRAD_TOL {
            break;
        }
        let h = hessian(train, &theta, l2);
        let step = solve_newton_step(&h, &grad)?;
        // Backtracking: halve until the objective actually decreases.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = theta.iter().enumerate().map(|(j, t)| t - alpha * step[j]).collect();
            let (new_loss, new_grad) = logistic_loss_grad(train, &candidate, l2);
            if new_loss <= loss - 1e-16 || new_loss < loss + 1e-15 && alpha == 1.0 {
                theta = candidate;
                loss = new_loss;
                grad = new_grad;
                accepted = true;
                break;
            }
            alpha /= 2.0;
        }
        if !accepted {
            break; // at numerical floor; gradient check below decides
        }
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if grad_norm > 1e-6 {
        return Err(ModelError::NoConvergence { grad_norm });
    }
    Ok(LinearModel { weights: theta[..dim].to_vec(), bias: theta[dim] })
}

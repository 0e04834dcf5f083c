//! Small fully connected network: ReLU hidden layers, sigmoid output,
//! trained with mini-batch gradient descent on the log-loss. Everything is
//! plain f64 so finite-difference gradient checks are meaningful.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{log1p_exp, sigmoid, Classifier, ModelError};
use crate::data::Dataset;

/// One dense layer: `w` is out×in, row per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Feed-forward binary classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: vec![32, 16], epochs: 200, learning_rate: 0.1, batch_size: 32, seed: 0 }
    }
}

impl Mlp {
    /// Xavier-uniform initialization from a seeded stream.
    fn init(sizes: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
        let mut layers = Vec::new();
        for pair in sizes.windows(2) {
            let (n_in, n_out) = (pair[0], pair[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let w = (0..n_out)
                .map(|_| (0..n_in).map(|_| rng.random_range(-limit..limit)).collect())
                .collect();
            layers.push(Layer { w, b: vec![0.0; n_out] });
        }
        Mlp { layers }
    }

    /// Forward pass keeping every layer's activations (index 0 = input).
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut activations = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = activations.last().unwrap();
            let mut out = Vec::with_capacity(layer.b.len());
            for (row, bias) in layer.w.iter().zip(&layer.b) {
                let z: f64 = row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>() + bias;
                out.push(if l == last { sigmoid(z) } else { z.max(0.0) });
            }
            activations.push(out);
        }
        activations
    }

    /// Mean log-loss over a batch.
    pub fn loss(&self, x: &[Vec<f64>], y: &[u8]) -> f64 {
        let mut total = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let activations = self.forward(xi);
            let p = activations.last().unwrap()[0];
            // Recover the pre-sigmoid logit for a stable loss.
            let z = (p / (1.0 - p)).ln();
            total += if z.is_finite() {
                log1p_exp(z) - f64::from(yi) * z
            } else {
                // Saturated output: loss is 0 or huge depending on the label.
                let correct = (p >= 0.5) == (yi == 1);
                if correct {
                    0.0
                } else {
                    50.0
                }
            };
        }
        total / x.len() as f64
    }

    /// Mean log-loss and its gradient w.r.t. every parameter, by backprop.
    /// Returned gradients have the same shape as `layers`.
    pub fn loss_and_gradients(&self, x: &[Vec<f64>], y: &[u8]) -> (f64, Vec<Layer>) {
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer { w: l.w.iter().map(|r| vec![0.0; r.len()]).collect(), b: vec![0.0; l.b.len()] })
            .collect();
        let mut total_loss = 0.0;
        let scale = 1.0 / x.len() as f64;
        for (xi, &yi) in x.iter().zip(y) {
            let activations = self.forward(xi);
            let p = activations.last().unwrap()[0];
            let yf = f64::from(yi);
            let eps = 1e-12;
            total_loss += -(yf * p.max(eps).ln() + (1.0 - yf) * (1.0 - p).max(eps).ln());
            // Output delta for sigmoid + log-loss is simply p - y.
            let mut delta = vec![p - yf];
            for l in (0..self.layers.len()).rev() {
                let input = &activations[l];
                for (u, du) in delta.iter().enumerate() {
                    grads[l].b[u] += du * scale;
                    for (j, inp) in input.iter().enumerate() {
                        grads[l].w[u][j] += du * inp * scale;
                    }
                }
                if l > 0 {
                    // Push the delta through the layer and the ReLU mask.
                    let mut prev_delta = vec![0.0; input.len()];
                    for (u, du) in delta.iter().enumerate() {
                        for (j, slot) in prev_delta.iter_mut().enumerate() {
                            *slot += du * self.layers[l].w[u][j];
                        }
                    }
                    for (j, slot) in prev_delta.iter_mut().enumerate() {
                        if input[j] <= 0.0 {
                            *slot = 0.0;
                        }
                    }
                    delta = prev_delta;
                }
            }
        }
        (total_loss * scale, grads)
    }
}

impl Classifier for Mlp {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        self.forward(x).last().unwrap()[0]
    }
    fn tag(&self) -> &'static str {
        "nn"
    }
}

/// Train with mini-batch gradient descent. Deterministic under the config
/// seed; errors with the epoch index if the loss ever becomes non-finite.
pub fn fit_mlp(train: &Dataset, cfg: &MlpConfig) -> Result<Mlp, ModelError> {
    if cfg.hidden.iter().any(|&h| h == 0) || cfg.batch_size == 0 {
        return Err(ModelError::BadParam { what: "hidden sizes and batch_size must be >= 1".into() });
    }
    if !cfg.learning_rate.is_finite() || cfg.learning_rate < 0.0 {
        return Err(ModelError::BadParam { what: format!("learning_rate must be >= 0, got {}", cfg.learning_rate) });
    }
    super::check_two_classes(train)?;
    let mut sizes = vec![train.d()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Mlp::init(&sizes, &mut rng);

    let mut order: Vec<usize> = (0..train.n()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| train.x[i].clone()).collect();
            let ys: Vec<u8> = chunk.iter().map(|&i| train.y[i]).collect();
            let (loss, grads) = net.loss_and_gradients(&xs, &ys);
            if !loss.is_finite() {
                return Err(ModelError::Divergence { epoch });
            }
            for (layer, grad) in net.layers.iter_mut().zip(&grads) {
                for (wrow, grow) in layer.w.iter_mut().zip(&grad.w) {
                    for (w, g) in wrow.iter_mut().zip(grow) {
                        *w -= cfg.learning_rate * g;
                    }
                }
                for (b, g) in layer.b.iter_mut().zip(&grad.b) {
                    *b -= cfg.learning_rate * g;
                }
            }
        }
    }
    Ok(net)
}

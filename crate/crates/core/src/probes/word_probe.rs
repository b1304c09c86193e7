//! L2-regularized logistic regression over static embeddings.
//!
//! The objective is
//!
//! ```text
//! J(w, b) = (1/n) * [ sum_i log(1 + exp(z_i)) - y_i z_i  +  (l2/2) |w|^2 ],   z_i = w.x_i + b
//! ```
//!
//! (the bias is not penalized), minimized by full-batch gradient descent
//! with Armijo backtracking from a zero start. Scaling the sum and the
//! penalty by the same `1/n` keeps the minimizer of the usual
//! `C = 1 / l2` formulation while keeping `tol` independent of `n`.

use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, ProbeError};
use crate::corpus::Label;
use crate::metrics::PredictionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient's Euclidean norm is at most this.
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { l2: 1.0, max_iter: 10_000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub final_loss: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: TrainingMeta,
}

impl ProbeModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(z)) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn target(label: Label) -> f64 {
    if label.is_positive() {
        1.0
    } else {
        0.0
    }
}

/// Objective value at `(weights, bias)`.
pub fn logistic_objective(xs: &[Vec<f64>], ys: &[Label], weights: &[f64], bias: f64, l2: f64) -> f64 {
    let n = xs.len() as f64;
    let data: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z = x.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() + bias;
            softplus(z) - target(y) * z
        })
        .sum();
    let penalty = 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    (data + penalty) / n
}

/// Gradient of [`logistic_objective`]; returns `(d/dw, d/db)`.
pub fn logistic_gradient(xs: &[Vec<f64>], ys: &[Label], weights: &[f64], bias: f64, l2: f64) -> (Vec<f64>, f64) {
    let n = xs.len() as f64;
    let mut gw: Vec<f64> = weights.iter().map(|w| l2 * w).collect();
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = x.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() + bias;
        let r = sigmoid(z) - target(y);
        for (g, a) in gw.iter_mut().zip(x) {
            *g += r * a;
        }
        gb += r;
    }
    gw.iter_mut().for_each(|g| *g /= n);
    (gw, gb / n)
}

pub fn train_word_probe(train: &EmbeddingSet, config: ProbeConfig) -> Result<ProbeModel, ProbeError> {
    train_word_probe_from(train, config, None)
}

/// Same as [`train_word_probe`] but starting from `init` instead of zero.
pub fn train_word_probe_from(
    train: &EmbeddingSet,
    config: ProbeConfig,
    init: Option<(Vec<f64>, f64)>,
) -> Result<ProbeModel, ProbeError> {
    if !(config.l2 >= 0.0 && config.l2.is_finite()) || config.tol.is_nan() || config.tol <= 0.0 {
        return Err(ProbeError::Input(format!("invalid probe config {config:?}")));
    }
    let ys = train.labels()?;
    let positives = ys.iter().filter(|l| l.is_positive()).count();
    if positives < 2 || ys.len() - positives < 2 {
        return Err(ProbeError::DegenerateTraining);
    }
    let xs: Vec<Vec<f64>> = train.records().iter().map(|r| r.vector.clone()).collect();
    let (mut w, mut b) = match init {
        Some((w, b)) if w.len() == train.dim() => (w, b),
        Some((w, _)) => return Err(ProbeError::DimensionMismatch { expected: train.dim(), got: w.len() }),
        None => (vec![0.0; train.dim()], 0.0),
    };

    const ARMIJO: f64 = 1e-4;
    const MIN_STEP: f64 = 1e-20;
    let l2 = config.l2;
    let mut loss = logistic_objective(&xs, &ys, &w, b, l2);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;

    while iterations < config.max_iter {
        let (gw, gb) = logistic_gradient(&xs, &ys, &w, b, l2);
        let sq = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        grad_norm = sq.sqrt();
        if !grad_norm.is_finite() || !loss.is_finite() {
            return Err(ProbeError::Numeric(format!("non-finite loss or gradient at iteration {iterations}")));
        }
        if grad_norm <= config.tol {
            converged = true;
            break;
        }
        // let the step grow again after easy iterations
        step *= 2.0;
        loop {
            let cand_w: Vec<f64> = w.iter().zip(&gw).map(|(wi, g)| wi - step * g).collect();
            let cand_b = b - step * gb;
            let cand_loss = logistic_objective(&xs, &ys, &cand_w, cand_b, l2);
            if cand_loss.is_nan() {
                return Err(ProbeError::Numeric(format!("loss became NaN at iteration {iterations}")));
            }
            if cand_loss <= loss - ARMIJO * step * sq {
                w = cand_w;
                b = cand_b;
                loss = cand_loss;
                break;
            }
            step *= 0.5;
            if step < MIN_STEP {
                break;
            }
        }
        iterations += 1;
        if step < MIN_STEP {
            // no representable descent step left
            log::debug!("word probe line search exhausted at iteration {iterations}, |g| = {grad_norm:e}");
            break;
        }
    }
    if !converged {
        log::warn!(
            "word probe stopped after {iterations} iterations with gradient norm {grad_norm:e} (tol {:e})",
            config.tol
        );
    }
    Ok(ProbeModel {
        weights: w,
        bias: b,
        meta: TrainingMeta { iterations, final_loss: loss, gradient_norm: grad_norm, converged, l2 },
    })
}

/// Scores every eval record; `score` is the class-1 probability.
pub fn apply_word_probe(model: &ProbeModel, eval: &EmbeddingSet) -> Result<Vec<PredictionRecord>, ProbeError> {
    if model.weights.len() != eval.dim() {
        return Err(ProbeError::DimensionMismatch { expected: model.weights.len(), got: eval.dim() });
    }
    Ok(eval
        .records()
        .iter()
        .map(|r| PredictionRecord::from_score(r.id.clone(), model.probability(&r.vector)))
        .collect())
}

//! Class-weighted cross entropy and the MSE residual machinery.

use crate::error::{Error, Result};
use crate::model::Logits;
use crate::real::Real;
use crate::schedule::ClassWeights;

/// Cross entropy of one row of logits against `label`, and its gradient with
/// respect to the logits, both scaled by `scale`.
///
/// Uses the max-shifted log-sum-exp; `grad` receives `scale * (softmax - onehot)`.
#[inline]
pub fn ce_row<S: Real>(logits: &[S], label: usize, scale: f64, grad: &mut [S]) -> S {
    let mut max = f64::NEG_INFINITY;
    for z in logits {
        max = max.max(z.value());
    }
    let shift = S::from_f64(-max);
    let mut denom = S::from_f64(0.0);
    for (g, &z) in grad.iter_mut().zip(logits) {
        let e = (z + shift).exp();
        *g = e;
        denom += e;
    }
    let inv = S::from_f64(1.0) / denom;
    for g in grad.iter_mut() {
        *g = *g * inv * scale;
    }
    grad[label] = grad[label] + (-scale);
    // -log p_y = log(sum exp(z - max)) - (z_y - max)
    (denom.ln() - (logits[label] + shift)) * scale
}

/// Mean over samples of `gamma[y] * (-log softmax(logits)[y])`.
pub fn dynamical_ce(logits: &Logits, labels: &[usize], gamma: &ClassWeights) -> Result<f64> {
    check(logits, labels)?;
    if gamma.len() != logits.num_classes() {
        return Err(Error::Shape(format!(
            "gamma has {} entries for {} classes",
            gamma.len(),
            logits.num_classes()
        )));
    }
    let n = labels.len() as f64;
    let mut scratch = vec![0.0; logits.num_classes()];
    let mut total = 0.0;
    for (j, &y) in labels.iter().enumerate() {
        total += ce_row(logits.row(j), y, gamma[y], &mut scratch);
    }
    Ok(total / n)
}

/// `(1 / 2N) * sum_{j,k} (f_k(x_j) - onehot(y_j)_k)^2` over raw logits.
pub fn mse_loss(logits: &Logits, labels: &[usize]) -> Result<f64> {
    let g = residuals(logits, labels)?;
    Ok(g.norm_squared() / (2.0 * labels.len() as f64))
}

/// Network outputs minus one-hot targets, flattened sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector(pub Vec<f64>);

impl ResidualVector {
    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn residuals(logits: &Logits, labels: &[usize]) -> Result<ResidualVector> {
    check(logits, labels)?;
    let c = logits.num_classes();
    let mut g = logits.as_slice().to_vec();
    for (j, &y) in labels.iter().enumerate() {
        g[j * c + y] -= 1.0;
    }
    Ok(ResidualVector(g))
}

fn check(logits: &Logits, labels: &[usize]) -> Result<()> {
    if logits.num_samples() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.num_samples(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.num_classes()) {
        return Err(Error::Shape(format!(
            "label {bad} out of range for {} classes",
            logits.num_classes()
        )));
    }
    Ok(())
}

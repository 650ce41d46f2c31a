//! Uncertainty-weighted mixup: convex mixing of sample pairs and the
//! weighted two-label cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{log_softmax_slice, sample_beta, softmax_slice, NumArray, Real, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub struct MixedSample<F = f32> {
    pub x_mixed: NumArray<F>,
    pub y_i: usize,
    pub y_j: usize,
    pub lambda: f64,
    pub w_i: f64,
    pub w_j: f64,
}

impl<F> MixedSample<F> {
    pub fn with_weights(mut self, w_i: f64, w_j: f64) -> Self {
        self.w_i = w_i;
        self.w_j = w_j;
        self
    }

    /// `λ onehot(y_i) + (1 − λ) onehot(y_j)`.
    pub fn soft_label(&self, k: usize) -> Vec<f64> {
        let mut y = vec![0.0; k];
        y[self.y_i] += self.lambda;
        y[self.y_j] += 1.0 - self.lambda;
        y
    }
}

/// `x̃ = λ x_i + (1 − λ) x_j`, with unit weights.
pub fn mix_samples<F: Real>(
    x_i: &NumArray<F>,
    y_i: usize,
    x_j: &NumArray<F>,
    y_j: usize,
    lambda: f64,
) -> Result<MixedSample<F>> {
    if x_i.shape() != x_j.shape() {
        return Err(Error::shape("mix_samples", format!("{:?} vs {:?}", x_i.shape(), x_j.shape())));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("mixing coefficient {lambda} outside [0, 1]")));
    }
    let mut x_mixed = x_i.clone();
    mix_into(x_mixed.data_mut(), x_j.data(), lambda);
    Ok(MixedSample {
        x_mixed,
        y_i,
        y_j,
        lambda,
        w_i: 1.0,
        w_j: 1.0,
    })
}

/// In place `a ← λ a + (1 − λ) b`.
pub fn mix_into<F: Real>(a: &mut [F], b: &[F], lambda: f64) {
    let (l, r) = (F::lit(lambda), F::lit(1.0 - lambda));
    for (x, &y) in a.iter_mut().zip(b) {
        *x = l * *x + r * y;
    }
}

/// Draws `λ ~ Beta(α, α)`.
pub fn sample_lambda(alpha_mix: f64, rng: &mut RngStream) -> Result<f64> {
    sample_beta(alpha_mix, rng)
}

/// Mixing partner of each position in a batch of `n`: the reversed order.
pub fn batch_partners(n: usize) -> Vec<usize> {
    (0..n).rev().collect()
}

/// `w_i λ CE(y_i) + w_j (1 − λ) CE(y_j)` on `softmax(logits)`.
pub fn umix_loss<F>(logits: &[f64], sample: &MixedSample<F>) -> Result<f64> {
    Ok(umix_loss_with_grad(logits, sample)?.0)
}

/// [`umix_loss`] and its gradient in the logits.
pub fn umix_loss_with_grad<F>(logits: &[f64], sample: &MixedSample<F>) -> Result<(f64, Vec<f64>)> {
    let k = logits.len();
    if sample.y_i >= k || sample.y_j >= k {
        return Err(Error::InvalidInput(format!(
            "labels ({}, {}) out of range for K = {k}",
            sample.y_i, sample.y_j
        )));
    }
    let log_p = log_softmax_slice(logits);
    let p = softmax_slice(logits);
    let a = sample.w_i * sample.lambda;
    let b = sample.w_j * (1.0 - sample.lambda);
    let loss = -a * log_p[sample.y_i] - b * log_p[sample.y_j];
    let mut grad: Vec<f64> = p.iter().map(|pk| (a + b) * pk).collect();
    grad[sample.y_i] -= a;
    grad[sample.y_j] -= b;
    Ok((loss, grad))
}

/// Hyperparameters of the mixup stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UmixConfig {
    pub enabled: bool,
    pub alpha_mix: f64,
    pub weight_rule: crate::uncertainty::WeightRule,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for UmixConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            alpha_mix: 0.4,
            weight_rule: Default::default(),
            alpha: 10.0,
            beta: 0.1,
        }
    }
}

impl UmixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_mix > 0.0 && self.alpha_mix.is_finite()) {
            return Err(Error::InvalidConfig(format!("umix.alpha_mix must be positive, got {}", self.alpha_mix)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "umix needs alpha ≥ 0 and beta > 0, got {} and {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

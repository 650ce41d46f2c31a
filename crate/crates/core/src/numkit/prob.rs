use serde::{Deserialize, Serialize};

use super::NumArray;
use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

const SUM_TOLERANCE: f64 = 1e-9;

/// Categorical distribution over `K >= 2` outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "categorical needs at least 2 outcomes, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidInput(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("weights sum to zero".into()));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k >= 2, "categorical needs at least 2 outcomes");
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn one_hot(k: usize, index: usize) -> Self {
        assert!(k >= 2 && index < k);
        let mut probs = vec![0.0; k];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for Categorical {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<Categorical> for Vec<f64> {
    fn from(c: Categorical) -> Self {
        c.probs
    }
}

/// Max-subtracted softmax over a raw slice.
pub fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Numerically stable log-softmax.
pub fn log_softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &NumArray) -> Result<Categorical> {
    if logits.shape().len() != 1 {
        return Err(Error::shape(
            "softmax",
            format!("expected 1-D logits, got shape {:?}", logits.shape()),
        ));
    }
    if logits.len() < 2 {
        return Err(Error::InvalidInput("softmax needs at least 2 logits".into()));
    }
    logits.ensure_finite("softmax")?;
    let mut probs = softmax_slice(logits.data());
    // Renormalize once more so the sum tolerance holds even for extreme spreads.
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(Categorical { probs })
}

/// `KL(p || q)` in nats; `q` is floored at [`PROB_FLOOR`].
pub fn kl_divergence(p: &Categorical, q: &Categorical) -> Result<f64> {
    if p.k() != q.k() {
        return Err(Error::shape(
            "kl_divergence",
            format!("length {} vs {}", p.k(), q.k()),
        ));
    }
    let kl: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln()))
        .sum();
    Ok(kl.max(0.0))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &Categorical) -> f64 {
    let h: f64 = -p
        .probs
        .iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| pi * pi.max(PROB_FLOOR).ln())
        .sum::<f64>();
    h.clamp(0.0, (p.k() as f64).ln())
}

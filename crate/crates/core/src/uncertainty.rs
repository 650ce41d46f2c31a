//! Monte Carlo dropout uncertainty and the mapping from uncertainty to
//! per-sample training weights.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learnkit::{forward_untraced, Mode, Network, ParamSet};
use crate::numkit::{softmax_slice, NumArray, Real, RngStream};

/// Largest population variance of values confined to `[0, 1]`.
pub const MAX_VARIANCE: f64 = 0.25;
const VARIANCE_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub passes: usize,
    pub dropout_rate: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            passes: 5,
            dropout_rate: 0.3,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(Error::InvalidConfig("mc passes must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub u: f64,
    pub per_class_variance: Vec<f64>,
}

impl UncertaintyScore {
    /// Population variance per class of `passes[t][k]`, and its maximum.
    pub fn from_passes(passes: &[Vec<f64>]) -> Result<Self> {
        let t = passes.len();
        if t == 0 {
            return Err(Error::InvalidInput("uncertainty needs at least one pass".into()));
        }
        let k = passes[0].len();
        if passes.iter().any(|p| p.len() != k) {
            return Err(Error::shape("UncertaintyScore", "passes disagree on class count"));
        }
        let per_class_variance: Vec<f64> = (0..k)
            .map(|c| {
                // Shifting by the first pass keeps identical passes at exactly zero.
                let shift = passes[0][c];
                let mean = passes.iter().map(|p| p[c] - shift).sum::<f64>() / t as f64;
                let var = passes.iter().map(|p| (p[c] - shift - mean).powi(2)).sum::<f64>() / t as f64;
                var.min(MAX_VARIANCE)
            })
            .collect();
        let u = per_class_variance.iter().copied().fold(0.0, f64::max);
        Ok(Self { u, per_class_variance })
    }
}

/// Weight `exp(−αu) + β` (default) or `1 − u`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    #[default]
    ExpBeta,
    OneMinusU,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleWeight {
    pub w: f64,
    pub source_u: f64,
}

impl SampleWeight {
    pub fn unit() -> Self {
        Self { w: 1.0, source_u: 0.0 }
    }
}

fn check_u(u: f64) -> Result<f64> {
    if !(0.0..=MAX_VARIANCE + VARIANCE_SLACK).contains(&u) {
        return Err(Error::InvalidInput(format!("uncertainty {u} outside [0, 0.25]")));
    }
    Ok(u.min(MAX_VARIANCE))
}

/// `w = exp(−α u) + β`.
pub fn weight_from_uncertainty(u: f64, alpha: f64, beta: f64) -> Result<SampleWeight> {
    let u = check_u(u)?;
    if !(alpha >= 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!("need alpha ≥ 0 and beta > 0, got {alpha}, {beta}")));
    }
    Ok(SampleWeight {
        w: (-alpha * u).exp() + beta,
        source_u: u,
    })
}

pub fn weight_with_rule(u: f64, rule: WeightRule, alpha: f64, beta: f64) -> Result<SampleWeight> {
    match rule {
        WeightRule::ExpBeta => weight_from_uncertainty(u, alpha, beta),
        WeightRule::OneMinusU => {
            let u = check_u(u)?;
            Ok(SampleWeight { w: 1.0 - u, source_u: u })
        }
    }
}

/// Runs `cfg.passes` stochastic passes and scores every sample.
///
/// `pass(rng)` must return class probabilities of shape `[N, K]`; pass `t`
/// receives `rng.child(t)`, so the result does not depend on pass order.
pub fn mc_uncertainty_with(
    cfg: &McConfig,
    rng: &RngStream,
    mut pass: impl FnMut(&mut RngStream) -> Result<NumArray<f64>>,
) -> Result<Vec<UncertaintyScore>> {
    cfg.validate()?;
    let mut outputs = Vec::with_capacity(cfg.passes);
    for t in 0..cfg.passes {
        let probs = pass(&mut rng.child(t as u64))?;
        if probs.shape().len() != 2 {
            return Err(Error::shape("mc_uncertainty", format!("pass output {:?} is not [N, K]", probs.shape())));
        }
        if let Some(first) = outputs.first() {
            let first: &NumArray<f64> = first;
            if first.shape() != probs.shape() {
                return Err(Error::shape("mc_uncertainty", "passes disagree on output shape"));
            }
        }
        outputs.push(probs);
    }
    let (n, k) = (outputs[0].shape()[0], outputs[0].shape()[1]);
    (0..n)
        .map(|i| {
            let rows: Vec<Vec<f64>> = outputs.iter().map(|o| o.data()[i * k..(i + 1) * k].to_vec()).collect();
            UncertaintyScore::from_passes(&rows)
        })
        .collect()
}

/// MC dropout through a single classifier network whose outputs are logits.
pub fn mc_uncertainty<F: Real>(
    net: &Network,
    params: &ParamSet<F>,
    input: &NumArray<F>,
    cfg: &McConfig,
    rng: &RngStream,
) -> Result<Vec<UncertaintyScore>> {
    let net = net.with_dropout_rate(cfg.dropout_rate);
    mc_uncertainty_with(cfg, rng, |r| {
        let logits = forward_untraced(&net, params, input, Mode::Train, r)?;
        softmax_rows(&logits)
    })
}

/// Row-wise softmax of `[N, K]` logits, in `f64`.
pub fn softmax_rows<F: Real>(logits: &NumArray<F>) -> Result<NumArray<f64>> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(Error::shape("softmax_rows", format!("{s:?} is not [N, K]")));
    }
    let data = logits
        .data()
        .chunks(s[1])
        .flat_map(|row| softmax_slice(&row.iter().map(|v| v.as_f64()).collect::<Vec<_>>()))
        .collect();
    NumArray::new(s.to_vec(), data)
}

/// One row of the uncertainty dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRow {
    pub sample_id: usize,
    pub u: f64,
    pub w: f64,
    pub noisy_label_flag: Option<bool>,
}

pub fn write_uncertainty_csv<W: Write>(mut w: W, rows: &[UncertaintyRow]) -> Result<()> {
    writeln!(w, "sample_id,u,w,noisy_label_flag")?;
    for r in rows {
        let flag = match r.noisy_label_flag {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        writeln!(w, "{},{},{},{}", r.sample_id, r.u, r.w, flag)?;
    }
    w.flush()?;
    Ok(())
}

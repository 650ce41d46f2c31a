//! Expected free energy scoring, greedy frame selection, and the spatial
//! attention head with its per-location EFE diagnostic.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodel::{belief_update, frame_likelihood, Belief, ConfusionModel, LikelihoodMatrix};
use crate::learnkit::{backward, forward, forward_untraced, ForwardTrace, LayerSpec, Mode, Network, ParamSet};
use crate::numkit::{entropy, Categorical, NumArray, Real, RngStream, PROB_FLOOR};

/// Kernel of the attention head's 2→1 convolution.
pub const ATTENTION_KERNEL: usize = 7;

/// Scored candidate action: `total = epistemic − entropy_term`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfeScore {
    pub action: usize,
    pub epistemic: f64,
    pub entropy_term: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EfeVariant {
    InfoGain,
    LabelTarget,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EfeMode {
    pub variant: EfeVariant,
    #[serde(default)]
    pub target: Option<usize>,
}

impl EfeMode {
    pub fn info_gain() -> Self {
        Self {
            variant: EfeVariant::InfoGain,
            target: None,
        }
    }

    pub fn label_target(target: usize) -> Self {
        Self {
            variant: EfeVariant::LabelTarget,
            target: Some(target),
        }
    }
}

fn check_k(belief: &Belief, a: &LikelihoodMatrix, context: &str) -> Result<()> {
    if belief.k() != a.k() {
        return Err(Error::shape(context, format!("belief over {} vs likelihood over {}", belief.k(), a.k())));
    }
    Ok(())
}

/// Marginal `p(o) = Σ_i belief_i A(i, o)` and, for each `o` with `p(o) > 0`,
/// the posterior `q(s | o)`.
fn predictive(belief: &Belief, a: &LikelihoodMatrix) -> Vec<(f64, Vec<f64>)> {
    let k = a.k();
    let b = belief.probs();
    (0..k)
        .map(|o| {
            let joint: Vec<f64> = (0..k).map(|i| b[i] * a.get(i, o)).collect();
            let p: f64 = joint.iter().sum();
            let post = if p > 0.0 { joint.iter().map(|j| j / p).collect() } else { Vec::new() };
            (p, post)
        })
        .collect()
}

/// Mutual information `Σ_o p(o) KL(q(s|o) ‖ belief)` between state and observation.
pub fn expected_info_gain(belief: &Belief, a: &LikelihoodMatrix) -> Result<f64> {
    check_k(belief, a, "expected_info_gain")?;
    let b = belief.probs();
    let mut gain = 0.0;
    for (p, post) in predictive(belief, a) {
        if p <= 0.0 {
            continue;
        }
        let kl: f64 = post
            .iter()
            .zip(b)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, bi)| q * (q.ln() - bi.max(PROB_FLOOR).ln()))
            .sum();
        gain += p * kl;
    }
    Ok(gain.max(0.0))
}

pub fn expected_free_energy(belief: &Belief, a: &LikelihoodMatrix, mode: &EfeMode) -> Result<EfeScore> {
    check_k(belief, a, "expected_free_energy")?;
    let (epistemic, entropy_term) = match mode.variant {
        EfeVariant::InfoGain => (-expected_info_gain(belief, a)?, 0.0),
        EfeVariant::LabelTarget => {
            let target = mode.target.ok_or(Error::MissingTarget)?;
            if target >= a.k() {
                return Err(Error::InvalidInput(format!("target {target} out of range for K = {}", a.k())));
            }
            let epistemic: f64 = predictive(belief, a)
                .iter()
                .filter(|(p, _)| *p > 0.0)
                .map(|(p, post)| p * -post[target].max(PROB_FLOOR).ln())
                .sum();
            let entropy_term: f64 = belief
                .probs()
                .iter()
                .enumerate()
                .map(|(i, &bi)| bi * row_entropy(a.row(i)))
                .sum();
            (epistemic, entropy_term)
        }
    };
    Ok(EfeScore {
        action: a.source_action,
        epistemic,
        entropy_term,
        total: epistemic - entropy_term,
    })
}

fn row_entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Trace of one greedy selection episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<usize>,
    /// Belief after each selection.
    pub beliefs: Vec<Belief>,
    /// Scores of every still-unselected candidate, one list per round.
    pub scores: Vec<Vec<EfeScore>>,
}

impl SelectionResult {
    pub fn final_belief(&self) -> Option<&Belief> {
        self.beliefs.last()
    }

    /// Per-round totals indexed by frame; already-selected frames are `None`.
    pub fn totals_by_frame(&self, frames: usize) -> Vec<Vec<Option<f64>>> {
        self.scores
            .iter()
            .map(|round| {
                let mut row = vec![None; frames];
                for s in round {
                    row[s.action] = Some(s.total);
                }
                row
            })
            .collect()
    }
}

/// Default number of observed frames: `max(4, ceil(T / 8))`.
pub fn default_budget(frames: usize) -> usize {
    4.max(frames.div_ceil(8))
}

/// Evenly spaced frame indices at the centres of `budget` equal segments.
pub fn uniform_stride(frames: usize, budget: usize) -> Vec<usize> {
    let b = budget.min(frames);
    (0..b).map(|k| (2 * k + 1) * frames / (2 * b)).collect()
}

/// Greedy EFE-minimizing frame selection starting from a uniform belief.
///
/// Each round scores every unselected frame, keeps the lowest total (ties go
/// to the lowest index), observes that frame's argmax class, and updates the
/// belief.
pub fn select_frames(
    frame_softmaxes: &[Categorical],
    confusion: &ConfusionModel,
    budget: usize,
    mode: &EfeMode,
) -> Result<SelectionResult> {
    if frame_softmaxes.is_empty() || budget == 0 {
        return Err(Error::InvalidInput(format!(
            "select_frames needs T ≥ 1 and budget ≥ 1, got T = {} and budget = {budget}",
            frame_softmaxes.len()
        )));
    }
    if mode.variant == EfeVariant::LabelTarget && mode.target.is_none() {
        return Err(Error::MissingTarget);
    }
    let likelihoods = frame_softmaxes
        .iter()
        .enumerate()
        .map(|(t, s)| frame_likelihood(confusion, s, t))
        .collect::<Result<Vec<_>>>()?;
    let rounds = budget.min(frame_softmaxes.len());
    let mut taken = vec![false; frame_softmaxes.len()];
    let mut belief = Belief::uniform(confusion.k());
    let mut result = SelectionResult {
        selected: Vec::with_capacity(rounds),
        beliefs: Vec::with_capacity(rounds),
        scores: Vec::with_capacity(rounds),
    };
    for _ in 0..rounds {
        let mut round = Vec::new();
        let mut best: Option<EfeScore> = None;
        for (t, a) in likelihoods.iter().enumerate() {
            if taken[t] {
                continue;
            }
            let score = expected_free_energy(&belief, a, mode)?;
            if best.map_or(true, |b| score.total < b.total) {
                best = Some(score);
            }
            round.push(score);
        }
        let pick = best.expect("at least one candidate remains").action;
        taken[pick] = true;
        belief = belief_update(&belief, &likelihoods[pick], frame_softmaxes[pick].argmax())?;
        result.selected.push(pick);
        result.beliefs.push(belief.clone());
        result.scores.push(round);
    }
    Ok(result)
}

/// One line of the selection dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub sequence_id: usize,
    pub selected: Vec<usize>,
    pub totals: Vec<Vec<Option<f64>>>,
    pub final_belief: Vec<f64>,
}

impl SelectionRecord {
    pub fn new(sequence_id: usize, frames: usize, result: &SelectionResult) -> Self {
        Self {
            sequence_id,
            selected: result.selected.clone(),
            totals: result.totals_by_frame(frames),
            final_belief: result.final_belief().map(|b| b.probs().to_vec()).unwrap_or_default(),
        }
    }
}

pub fn write_selection_jsonl<W: Write>(mut w: W, records: &[SelectionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Attention head over `[channels, height, width]` feature maps: channel
/// mean and max pools, a 2→1 same-padded convolution, and a sigmoid.
pub fn attention_head(name: &str, channels: usize, height: usize, width: usize) -> Result<Network> {
    Network::new(
        name,
        vec![channels, height, width],
        vec![
            LayerSpec::ConcatChannels {
                branches: vec![LayerSpec::ChannelAvgPool, LayerSpec::ChannelMaxPool],
            },
            LayerSpec::conv_same(2, 1, ATTENTION_KERNEL),
            LayerSpec::Sigmoid,
        ],
    )
}

/// Sigmoid attention weights for a batch, shape `[N, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialMask<F = f32> {
    values: NumArray<F>,
}

impl<F: Real> SpatialMask<F> {
    pub fn values(&self) -> &NumArray<F> {
        &self.values
    }

    /// Mask of sample `n` as an `[H, W]` array.
    pub fn sample(&self, n: usize) -> Result<NumArray<f64>> {
        let s = self.values.shape();
        if n >= s[0] {
            return Err(Error::InvalidInput(format!("mask sample {n} out of range for batch {}", s[0])));
        }
        let plane = s[1] * s[2];
        let data = self.values.data()[n * plane..(n + 1) * plane].iter().map(|v| v.as_f64()).collect();
        NumArray::new(vec![s[1], s[2]], data)
    }
}

/// Cached state for [`spatial_attention_backward`].
#[derive(Debug)]
pub struct AttentionTrace<F> {
    head: ForwardTrace<F>,
    features: NumArray<F>,
    mask: NumArray<F>,
}

impl<F: Real> AttentionTrace<F> {
    /// Channel-max winners of the head, see [`ForwardTrace::activation_pattern`].
    pub fn activation_pattern(&self) -> Vec<u32> {
        self.head.activation_pattern()
    }
}

/// Computes the mask `M = σ(conv([avg_c F; max_c F]))` and `F' = M ⊙ F` for
/// features of shape `[N, C, H, W]`.
pub fn spatial_attention_forward<F: Real>(
    head: &Network,
    params: &ParamSet<F>,
    features: &NumArray<F>,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(SpatialMask<F>, NumArray<F>, AttentionTrace<F>)> {
    check_features(head, features)?;
    let (mask, trace) = forward(head, params, features, mode, rng)?;
    let (spatial, out) = reweight(features, &mask)?;
    Ok((
        spatial,
        out,
        AttentionTrace {
            head: trace,
            features: features.clone(),
            mask,
        },
    ))
}

/// [`spatial_attention_forward`] without recording a trace.
pub fn spatial_attention_untraced<F: Real>(
    head: &Network,
    params: &ParamSet<F>,
    features: &NumArray<F>,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(SpatialMask<F>, NumArray<F>)> {
    check_features(head, features)?;
    let mask = forward_untraced(head, params, features, mode, rng)?;
    reweight(features, &mask)
}

fn check_features<F: Real>(head: &Network, features: &NumArray<F>) -> Result<()> {
    let s = features.shape();
    if s.len() != 4 || s[1..] != head.input_shape[..] {
        return Err(Error::shape(
            "spatial_attention_forward",
            format!("features {s:?} do not match head input [N, {:?}]", head.input_shape),
        ));
    }
    Ok(())
}

fn reweight<F: Real>(features: &NumArray<F>, mask: &NumArray<F>) -> Result<(SpatialMask<F>, NumArray<F>)> {
    let s = features.shape();
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    let mut out = features.clone();
    for (i, chunk) in out.data_mut().chunks_mut(c * plane).enumerate() {
        let m = &mask.data()[i * plane..(i + 1) * plane];
        for channel in chunk.chunks_mut(plane) {
            channel.iter_mut().zip(m).for_each(|(x, &w)| *x *= w);
        }
    }
    let spatial = SpatialMask {
        values: mask.clone().reshape(vec![n, s[2], s[3]])?,
    };
    Ok((spatial, out))
}

/// Gradients of the head parameters and the input features given the
/// gradient with respect to the reweighted features.
pub fn spatial_attention_backward<F: Real>(
    head: &Network,
    params: &ParamSet<F>,
    trace: AttentionTrace<F>,
    upstream: &NumArray<F>,
) -> Result<(ParamSet<F>, NumArray<F>)> {
    let s = trace.features.shape().to_vec();
    if upstream.shape() != s.as_slice() {
        return Err(Error::shape(
            "spatial_attention_backward",
            format!("upstream {:?} vs features {s:?}", upstream.shape()),
        ));
    }
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    let mut d_features = upstream.clone();
    let mut d_mask = NumArray::zeros(vec![n, 1, s[2], s[3]]);
    for i in 0..n {
        let m = &trace.mask.data()[i * plane..(i + 1) * plane];
        let dm = &mut d_mask.data_mut()[i * plane..(i + 1) * plane];
        for ch in 0..c {
            let off = (i * c + ch) * plane;
            let f = &trace.features.data()[off..off + plane];
            let df = &mut d_features.data_mut()[off..off + plane];
            for p in 0..plane {
                dm[p] += f[p] * df[p];
                df[p] *= m[p];
            }
        }
    }
    let (grads, d_head_input) = backward(head, params, trace.head, &d_mask)?;
    d_features.axpy(F::one(), &d_head_input)?;
    Ok((grads, d_features))
}

/// Mask-weighted EFE `Σ_i M_i G_i` over spatial locations.
pub fn spatial_efe(per_location_g: &NumArray<f64>, mask: &NumArray<f64>) -> Result<f64> {
    if per_location_g.shape() != mask.shape() || per_location_g.shape().len() != 2 {
        return Err(Error::shape(
            "spatial_efe",
            format!("G {:?} vs mask {:?}", per_location_g.shape(), mask.shape()),
        ));
    }
    Ok(per_location_g.data().iter().zip(mask.data()).map(|(g, m)| g * m).sum())
}

/// Per-location EFE contributions `G_i = IG(without i) − IG(all)` on an
/// `height × width` grid.
///
/// `info_gain(None)` must return the frame's information gain with every
/// location present and `info_gain(Some(i))` the gain with location `i`
/// masked out. Negative entries mark locations whose removal costs
/// information.
pub fn location_efe_map(
    height: usize,
    width: usize,
    mut info_gain: impl FnMut(Option<usize>) -> Result<f64>,
) -> Result<NumArray<f64>> {
    let base = info_gain(None)?;
    let data = (0..height * width)
        .map(|i| Ok(info_gain(Some(i))? - base))
        .collect::<Result<Vec<_>>>()?;
    NumArray::new(vec![height, width], data)
}

/// Information gain of a frame from a uniform belief given its class softmax.
pub fn frame_info_gain(confusion: &ConfusionModel, frame_softmax: &Categorical) -> Result<f64> {
    let a = frame_likelihood(confusion, frame_softmax, 0)?;
    expected_info_gain(&Belief::uniform(confusion.k()), &a)
}

/// Entropy of a belief, in nats.
pub fn belief_entropy(belief: &Belief) -> f64 {
    entropy(&belief.dist)
}

use serde::{Deserialize, Serialize};

use crate::efe::{attention_head, spatial_attention_backward, spatial_attention_forward, spatial_attention_untraced, AttentionTrace, SpatialMask};
use crate::error::{Error, Result};
use crate::learnkit::{backward, forward, forward_untraced, init_params_into, ForwardTrace, LayerSpec, Mode, Network, ParamSet};
use crate::numkit::{NumArray, Real, RngStream};

pub const STEM: &str = "stem";
pub const ATTENTION: &str = "attention";
pub const TAIL: &str = "tail";
pub const CLASSIFIER: &str = "classifier";

/// Encoder and classifier sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub embed: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            embed: 32,
            hidden: 32,
            dropout: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.embed == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("model sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("model.dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Frame encoder (conv stem, optional spatial attention, dense tail) and a
/// classifier shared by frame-level and sequence-level predictions.
///
/// Frames enter as `[M, 1, G, G]`. A sequence prediction averages the
/// embeddings of its selected frames before the classifier.
#[derive(Clone, Debug)]
pub struct Model<F = f32> {
    pub stem: Network,
    pub attention: Option<Network>,
    pub tail: Network,
    pub classifier: Network,
    pub params: ParamSet<F>,
}

/// Traces of an embedding pass.
pub struct EmbedTrace<F> {
    stem: ForwardTrace<F>,
    attention: Option<AttentionTrace<F>>,
    tail: ForwardTrace<F>,
}

pub struct SequenceTrace<F> {
    embed: EmbedTrace<F>,
    classifier: ForwardTrace<F>,
    per_sequence: usize,
}

impl<F: Real> SequenceTrace<F> {
    /// Relu states and channel-max winners across all stages.
    pub fn activation_pattern(&self) -> Vec<u32> {
        let mut p = self.embed.stem.activation_pattern();
        if let Some(a) = &self.embed.attention {
            p.extend(a.activation_pattern());
        }
        p.extend(self.embed.tail.activation_pattern());
        p.extend(self.classifier.activation_pattern());
        p
    }
}

impl<F: Real> Model<F> {
    pub fn networks_for(cfg: &ModelConfig, grid: usize, num_classes: usize, spatial: bool) -> Result<Vec<Network>> {
        cfg.validate()?;
        let c = cfg.channels;
        let mut nets = vec![Network::new(
            STEM,
            vec![1, grid, grid],
            vec![LayerSpec::conv_same(1, c, 3), LayerSpec::Relu, LayerSpec::conv_same(c, c, 3), LayerSpec::Relu],
        )?];
        if spatial {
            nets.push(attention_head(ATTENTION, c, grid, grid)?);
        }
        nets.push(Network::new(
            TAIL,
            vec![c, grid, grid],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Linear {
                    inputs: c * grid * grid,
                    outputs: cfg.embed,
                },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: cfg.dropout },
            ],
        )?);
        nets.push(Network::new(
            CLASSIFIER,
            vec![cfg.embed],
            vec![
                LayerSpec::Linear {
                    inputs: cfg.embed,
                    outputs: cfg.hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: cfg.dropout },
                LayerSpec::Linear {
                    inputs: cfg.hidden,
                    outputs: num_classes,
                },
            ],
        )?);
        Ok(nets)
    }

    /// Freshly initialized model.
    pub fn new(cfg: &ModelConfig, grid: usize, num_classes: usize, spatial: bool, rng: &mut RngStream) -> Result<Self> {
        let nets = Self::networks_for(cfg, grid, num_classes, spatial)?;
        let mut params = ParamSet::new();
        for net in &nets {
            init_params_into(net, &mut params, rng);
        }
        Self::from_parts(nets, params)
    }

    /// Reassembles a model from named networks and their parameters.
    pub fn from_parts(networks: Vec<Network>, params: ParamSet<F>) -> Result<Self> {
        let mut stem = None;
        let mut attention = None;
        let mut tail = None;
        let mut classifier = None;
        for net in networks {
            params.check_against(&net)?;
            let slot = match net.name.as_str() {
                STEM => &mut stem,
                ATTENTION => &mut attention,
                TAIL => &mut tail,
                CLASSIFIER => &mut classifier,
                other => return Err(Error::InvalidInput(format!("unexpected network {other:?} in model"))),
            };
            *slot = Some(net);
        }
        let missing = |n: &str| Error::InvalidInput(format!("model is missing the {n} network"));
        let model = Self {
            stem: stem.ok_or_else(|| missing(STEM))?,
            attention,
            tail: tail.ok_or_else(|| missing(TAIL))?,
            classifier: classifier.ok_or_else(|| missing(CLASSIFIER))?,
            params,
        };
        let feature_shape = model.stem.output_shape()?;
        if model.tail.input_shape != feature_shape || model.classifier.input_shape != model.tail.output_shape()? {
            return Err(Error::shape("Model", "networks do not chain"));
        }
        Ok(model)
    }

    pub fn networks(&self) -> Vec<Network> {
        let mut nets = vec![self.stem.clone()];
        nets.extend(self.attention.clone());
        nets.push(self.tail.clone());
        nets.push(self.classifier.clone());
        nets
    }

    pub fn grid(&self) -> usize {
        self.stem.input_shape[1]
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_shape().map(|s| s[0]).unwrap_or(0)
    }

    pub fn embed_dim(&self) -> usize {
        self.classifier.input_shape[0]
    }

    pub fn spatial(&self) -> bool {
        self.attention.is_some()
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            stem: self.stem.clone(),
            attention: self.attention.clone(),
            tail: self.tail.clone(),
            classifier: self.classifier.clone(),
            params: self.params.cast(),
        }
    }

    fn check_frames(&self, frames: &NumArray<F>) -> Result<()> {
        let s = frames.shape();
        if s.len() != 4 || s[1..] != self.stem.input_shape[..] {
            return Err(Error::shape("Model", format!("frames {s:?} are not [M, {:?}]", self.stem.input_shape)));
        }
        Ok(())
    }

    /// Stem features `[M, C, G, G]` before attention.
    pub fn stem_features(&self, frames: &NumArray<F>) -> Result<NumArray<F>> {
        self.check_frames(frames)?;
        forward_untraced(&self.stem, &self.params, frames, Mode::Infer, &mut RngStream::new(0, 0))
    }

    /// Attention masks `[M, G, G]` in infer mode, if the model has a head.
    pub fn attention_masks(&self, frames: &NumArray<F>) -> Result<Option<SpatialMask<F>>> {
        let Some(head) = &self.attention else { return Ok(None) };
        let f = self.stem_features(frames)?;
        Ok(Some(spatial_attention_untraced(head, &self.params, &f, Mode::Infer, &mut RngStream::new(0, 0))?.0))
    }

    /// Embeddings `[M, D]` from stem features, skipping the stem.
    pub fn embed_features(&self, features: &NumArray<F>, mode: Mode, rng: &mut RngStream) -> Result<NumArray<F>> {
        let f = match &self.attention {
            Some(head) => spatial_attention_untraced(head, &self.params, features, mode, rng)?.1,
            None => features.clone(),
        };
        forward_untraced(&self.tail, &self.params, &f, mode, rng)
    }

    /// Embeddings `[M, D]` without traces.
    pub fn embed(&self, frames: &NumArray<F>, mode: Mode, rng: &mut RngStream) -> Result<NumArray<F>> {
        self.check_frames(frames)?;
        let f = forward_untraced(&self.stem, &self.params, frames, mode, rng)?;
        self.embed_features(&f, mode, rng)
    }

    fn embed_traced(&self, frames: &NumArray<F>, mode: Mode, rng: &mut RngStream) -> Result<(NumArray<F>, EmbedTrace<F>)> {
        self.check_frames(frames)?;
        let (f, stem) = forward(&self.stem, &self.params, frames, mode, rng)?;
        let (f, attention) = match &self.attention {
            Some(head) => {
                let (_, r, t) = spatial_attention_forward(head, &self.params, &f, mode, rng)?;
                (r, Some(t))
            }
            None => (f, None),
        };
        let (e, tail) = forward(&self.tail, &self.params, &f, mode, rng)?;
        Ok((e, EmbedTrace { stem, attention, tail }))
    }

    /// Logits for `[M, D]` embeddings.
    pub fn classify(&self, embeddings: &NumArray<F>, mode: Mode, rng: &mut RngStream) -> Result<NumArray<F>> {
        forward_untraced(&self.classifier, &self.params, embeddings, mode, rng)
    }

    /// Untraced sequence logits, see [`Model::forward_sequences`].
    pub fn sequence_logits(&self, frames: &NumArray<F>, per_sequence: usize, mode: Mode, rng: &mut RngStream) -> Result<NumArray<F>> {
        let e = self.embed(frames, mode, rng)?;
        self.classify(&mean_pool(&e, per_sequence)?, mode, rng)
    }

    /// Copy whose dropout layers use `rate`.
    pub fn with_dropout_rate(&self, rate: f64) -> Self {
        Self {
            stem: self.stem.clone(),
            attention: self.attention.clone(),
            tail: self.tail.with_dropout_rate(rate),
            classifier: self.classifier.with_dropout_rate(rate),
            params: self.params.clone(),
        }
    }

    /// Sequence logits `[B, K]` for `B × per_sequence` frames stacked in
    /// sequence order.
    pub fn forward_sequences(
        &self,
        frames: &NumArray<F>,
        per_sequence: usize,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(NumArray<F>, SequenceTrace<F>)> {
        let (e, embed) = self.embed_traced(frames, mode, rng)?;
        let pooled = mean_pool(&e, per_sequence)?;
        let (logits, classifier) = forward(&self.classifier, &self.params, &pooled, mode, rng)?;
        Ok((
            logits,
            SequenceTrace {
                embed,
                classifier,
                per_sequence,
            },
        ))
    }

    /// Parameter gradients given the gradient of the loss in the logits.
    pub fn backward_sequences(&self, trace: SequenceTrace<F>, d_logits: &NumArray<F>) -> Result<ParamSet<F>> {
        let (mut grads, d_pooled) = backward(&self.classifier, &self.params, trace.classifier, d_logits)?;
        let d_embed = mean_pool_backward(&d_pooled, trace.per_sequence);
        let (g, d_features) = backward(&self.tail, &self.params, trace.embed.tail, &d_embed)?;
        grads.absorb(g);
        let d_stem = match (&self.attention, trace.embed.attention) {
            (Some(head), Some(t)) => {
                let (g, d) = spatial_attention_backward(head, &self.params, t, &d_features)?;
                grads.absorb(g);
                d
            }
            _ => d_features,
        };
        let (g, _) = backward(&self.stem, &self.params, trace.embed.stem, &d_stem)?;
        grads.absorb(g);
        Ok(grads)
    }
}

/// Averages consecutive groups of `per_sequence` rows of `[B·S, D]`.
pub fn mean_pool<F: Real>(e: &NumArray<F>, per_sequence: usize) -> Result<NumArray<F>> {
    let s = e.shape();
    if s.len() != 2 || per_sequence == 0 || s[0] % per_sequence != 0 {
        return Err(Error::shape("mean_pool", format!("{s:?} rows not divisible into groups of {per_sequence}")));
    }
    let (b, d) = (s[0] / per_sequence, s[1]);
    let scale = F::lit(1.0 / per_sequence as f64);
    let mut out = NumArray::zeros(vec![b, d]);
    for (i, row) in e.data().chunks(d).enumerate() {
        let dst = &mut out.data_mut()[(i / per_sequence) * d..(i / per_sequence + 1) * d];
        dst.iter_mut().zip(row).for_each(|(o, &v)| *o += v * scale);
    }
    Ok(out)
}

fn mean_pool_backward<F: Real>(d: &NumArray<F>, per_sequence: usize) -> NumArray<F> {
    let (b, dim) = (d.shape()[0], d.shape()[1]);
    let scale = F::lit(1.0 / per_sequence as f64);
    let mut out = NumArray::zeros(vec![b * per_sequence, dim]);
    for (i, row) in out.data_mut().chunks_mut(dim).enumerate() {
        let src = &d.data()[(i / per_sequence) * dim..(i / per_sequence + 1) * dim];
        row.iter_mut().zip(src).for_each(|(o, &v)| *o = v * scale);
    }
    out
}

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::efe::{EfeMode, SelectionRecord};
use crate::error::{Error, Result};
use crate::genmodel::ConfusionModel;
use crate::learnkit::{read_checkpoint, write_checkpoint, Mode};
use crate::numkit::{log_softmax_slice, Real, RngStream};
use crate::uncertainty::{mc_uncertainty_with, softmax_rows, weight_with_rule, UncertaintyRow};
use crate::synthdata::{Dataset, SequenceSample};

use super::model::mean_pool;
use super::selection::{planted_recall, select_sequence, sequence_frames, SelectorMode};
use super::{Model, TrainConfig};

/// Trained model with everything needed to reproduce its evaluation.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub confusion: ConfusionModel,
    pub config: TrainConfig,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointExtra {
    config: TrainConfig,
    confusion: ConfusionModel,
    epoch: usize,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let extra = serde_json::to_value(CheckpointExtra {
            config: self.config.clone(),
            confusion: self.confusion.clone(),
            epoch: self.epoch,
        })?;
        write_checkpoint(w, &self.model.networks(), &self.model.params, extra)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let (networks, params, extra) = read_checkpoint(r)?;
        let extra: CheckpointExtra =
            serde_json::from_value(extra).map_err(|e| Error::format(10, format!("checkpoint metadata: {e}")))?;
        let model = Model::from_parts(networks, params).map_err(|e| Error::format(10, e.to_string()))?;
        if extra.confusion.k() != model.num_classes() {
            return Err(Error::format(10, "confusion model and classifier disagree on class count"));
        }
        Ok(Self {
            model,
            confusion: extra.confusion,
            config: extra.config,
            epoch: extra.epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Selector used at evaluation time for this checkpoint's flags.
    pub fn selector(&self) -> SelectorMode {
        if self.config.temporal_selection {
            SelectorMode::Efe
        } else {
            SelectorMode::UniformStride
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub split: String,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// Mean cross-entropy of the sequence predictions.
    pub loss: f64,
    pub mean_frames_observed: f64,
    /// Mean fraction of planted frames among the observed ones.
    pub planted_recall: f64,
    pub predictions: Vec<usize>,
}

/// Sequence prediction for every sample with the given selector; the EFE
/// selector ranks frames by information gain.
pub fn evaluate_samples<F: Real>(
    model: &Model<F>,
    confusion: &ConfusionModel,
    samples: &[SequenceSample],
    budget: usize,
    selector: SelectorMode,
    split: &str,
) -> Result<EvalResult> {
    let k = model.num_classes();
    let mut rng = RngStream::new(0, 0);
    let mut correct = vec![0usize; k];
    let mut totals = vec![0usize; k];
    let (mut loss, mut frames, mut recall) = (0.0, 0.0, 0.0);
    let mut predictions = Vec::with_capacity(samples.len());
    for s in samples {
        let sel = select_sequence(model, confusion, s, budget, selector, &EfeMode::info_gain())?;
        let embeddings = match &sel.view {
            Some(view) => view.gather(&sel.indices),
            None => model.embed(&sequence_frames(s, Some(&sel.indices)), Mode::Infer, &mut rng)?,
        };
        let pooled = mean_pool(&embeddings, sel.indices.len())?;
        let logits: Vec<f64> = model.classify(&pooled, Mode::Infer, &mut rng)?.data().iter().map(|v| v.as_f64()).collect();
        let pred = argmax(&logits);
        loss -= log_softmax_slice(&logits)[s.label];
        totals[s.label] += 1;
        correct[s.label] += usize::from(pred == s.label);
        frames += sel.indices.len() as f64;
        recall += planted_recall(s, &sel.indices);
        predictions.push(pred);
    }
    let n = samples.len().max(1) as f64;
    Ok(EvalResult {
        split: split.to_string(),
        accuracy: correct.iter().sum::<usize>() as f64 / n,
        per_class_accuracy: correct
            .iter()
            .zip(&totals)
            .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
            .collect(),
        loss: loss / n,
        mean_frames_observed: frames / n,
        planted_recall: recall / n,
        predictions,
    })
}

/// Evaluates a checkpoint on a named split with its own selector.
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset, split: &str) -> Result<EvalResult> {
    evaluate_with(ckpt, dataset, split, ckpt.selector())
}

pub fn evaluate_with(ckpt: &Checkpoint, dataset: &Dataset, split: &str, selector: SelectorMode) -> Result<EvalResult> {
    let samples = &dataset.split(split)?.samples;
    let budget = ckpt.config.budget_for(dataset.config.frames);
    evaluate_samples(&ckpt.model, &ckpt.confusion, samples, budget, selector, split)
}

/// EFE selection traces for every sample of a split.
pub fn selection_records(ckpt: &Checkpoint, samples: &[SequenceSample], frames: usize) -> Result<Vec<SelectionRecord>> {
    let budget = ckpt.config.budget_for(frames);
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let sel = select_sequence(&ckpt.model, &ckpt.confusion, s, budget, SelectorMode::Efe, &EfeMode::info_gain())?;
            Ok(SelectionRecord::new(i, s.num_frames(), sel.trace.as_ref().expect("efe selection keeps its trace")))
        })
        .collect()
}

/// MC-dropout uncertainty and sample weight of every sample, observed
/// through the checkpoint's own selector.
pub fn uncertainty_rows(ckpt: &Checkpoint, samples: &[SequenceSample], frames: usize) -> Result<Vec<UncertaintyRow>> {
    let cfg = &ckpt.config;
    let budget = cfg.budget_for(frames);
    let model = ckpt.model.with_dropout_rate(cfg.mc.dropout_rate);
    let root = RngStream::new(cfg.seed, 4);
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let sel = select_sequence(&ckpt.model, &ckpt.confusion, s, budget, ckpt.selector(), &EfeMode::info_gain())?;
            let x = sequence_frames::<f32>(s, Some(&sel.indices));
            let score = mc_uncertainty_with(&cfg.mc, &root.child(i as u64), |r| {
                softmax_rows(&model.sequence_logits(&x, sel.indices.len(), Mode::Train, r)?)
            })?
            .remove(0);
            let w = weight_with_rule(score.u, cfg.umix.weight_rule, cfg.umix.alpha, cfg.umix.beta)?;
            Ok(UncertaintyRow {
                sample_id: i,
                u: score.u,
                w: w.w,
                noisy_label_flag: Some(s.noisy_label),
            })
        })
        .collect()
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

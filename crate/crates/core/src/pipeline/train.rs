use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::efe::{EfeMode, EfeVariant};
use crate::error::{Error, Result};
use crate::genmodel::{vfe_loss_with_grad, ConfusionModel, VfeConfig};
use crate::learnkit::{adam_step, AdamState, Mode};
use crate::numkit::{NumArray, RngStream};
use crate::synthdata::{Dataset, SequenceSample};
use crate::umix::{batch_partners, mix_into, sample_lambda, umix_loss_with_grad, MixedSample};
use crate::uncertainty::{mc_uncertainty_with, softmax_rows, weight_with_rule};

use super::eval::{argmax, evaluate_samples, Checkpoint, EvalResult};
use super::model::mean_pool;
use super::selection::{select_sequence, sequence_frames, SelectorMode};
use super::{Model, TrainConfig};

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,mean_u,mean_w,seconds,selector_mode";

/// One line of `metrics.csv`. `mean_u` and `mean_w` are empty unless
/// uncertainty weights were computed for that row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub mean_u: Option<f64>,
    pub mean_w: Option<f64>,
    pub seconds: f64,
    pub selector_mode: SelectorMode,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{:.3},{}",
            self.epoch,
            self.split,
            self.loss,
            self.accuracy,
            opt(self.mean_u),
            opt(self.mean_w),
            self.seconds,
            self.selector_mode.as_str()
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let cells: Vec<&str> = line.split(',').collect();
        let bad = || Error::InvalidInput(format!("malformed metrics row {line:?}"));
        if cells.len() != 8 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        Ok(Self {
            epoch: cells[0].parse().map_err(|_| bad())?,
            split: cells[1].to_string(),
            loss: num(cells[2])?,
            accuracy: num(cells[3])?,
            mean_u: opt(cells[4])?,
            mean_w: opt(cells[5])?,
            seconds: num(cells[6])?,
            selector_mode: match cells[7] {
                "efe" => SelectorMode::Efe,
                "uniform_stride" => SelectorMode::UniformStride,
                _ => return Err(bad()),
            },
        })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h == METRICS_HEADER => {}
        _ => return Err(Error::InvalidInput(format!("{} lacks the metrics header", path.display()))),
    }
    lines.map(|l| MetricsRow::parse(&l?)).collect()
}

/// Mean weight of clean and of noisy-labelled training samples in one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub epoch: usize,
    pub mean_w_clean: f64,
    pub mean_w_noisy: f64,
    pub clean: usize,
    pub noisy: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model and confusion state from the epoch with the best val accuracy.
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
    pub weights: Vec<WeightSummary>,
    /// Sum of per-epoch training time, excluding validation.
    pub train_seconds: f64,
    pub test: Option<EvalResult>,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    best_epoch: usize,
    best_val_accuracy: f64,
    test_accuracy: Option<f64>,
    train_seconds: f64,
    mc_passes: usize,
    umix: bool,
    temporal_selection: bool,
    spatial_selection: bool,
    seed: u64,
    test: &'a Option<EvalResult>,
}

struct RunFiles<'a> {
    dir: &'a Path,
    metrics: File,
}

impl<'a> RunFiles<'a> {
    fn create(dir: &'a Path, cfg: &TrainConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
        let mut metrics = File::create(dir.join("metrics.csv"))?;
        writeln!(metrics, "{METRICS_HEADER}")?;
        Ok(Self { dir, metrics })
    }

    fn append(&mut self, rows: &[MetricsRow]) -> Result<()> {
        for r in rows {
            writeln!(self.metrics, "{}", r.to_csv())?;
        }
        self.metrics.flush()?;
        Ok(())
    }
}

#[derive(Default)]
struct EpochStats {
    loss: f64,
    correct: usize,
    seen: usize,
    u_sum: f64,
    w_clean: (f64, usize),
    w_noisy: (f64, usize),
}

/// Trains on the `train` split, selecting the checkpoint by `val` accuracy
/// and reporting it on `test` when that split is non-empty.
///
/// With `out_dir`, writes `config.json`, `metrics.csv`, `checkpoint.uaai`,
/// `confusion.csv`, `weights.csv` (umix runs), and `summary.json`.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = &dataset.split("train")?.samples;
    let val_set = &dataset.split("val")?.samples;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    let k = dataset.num_classes();
    let frames = dataset.config.frames;
    let budget = cfg.budget_for(frames);
    let root = RngStream::new(cfg.seed, 0);
    let mut model = Model::<f32>::new(&cfg.model, dataset.config.grid, k, cfg.spatial_selection, &mut root.child(1))?;
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut confusion = ConfusionModel::new(k, cfg.confusion_smoothing)?;
    let vfe = VfeConfig::uniform_prior(k, cfg.beta_kl)?;
    let mut files = out_dir.map(|d| RunFiles::create(d, cfg)).transpose()?;

    let mut metrics = Vec::new();
    let mut weights = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut train_seconds = 0.0;
    for epoch in 1..=cfg.epochs {
        let selector = if cfg.temporal_selection && epoch > cfg.warmup_epochs {
            SelectorMode::Efe
        } else {
            SelectorMode::UniformStride
        };
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        root.child(2).child(epoch as u64).shuffle(&mut order);
        let mut stats = EpochStats::default();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&SequenceSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let step = Step {
                cfg,
                vfe: &vfe,
                budget,
                selector,
                rng: root.child(3).child(epoch as u64).child(b as u64),
            };
            step.run(&mut model, &mut adam, &mut confusion, &batch, &mut stats)
                .map_err(|e| match e {
                    Error::Divergence { loss, .. } => Error::Divergence { epoch, batch: b + 1, loss },
                    other => other,
                })?;
        }
        let elapsed = start.elapsed().as_secs_f64();
        train_seconds += elapsed;
        let seconds = |s: f64| if cfg.record_wall_clock { s } else { 0.0 };
        let n = stats.seen as f64;
        let umix = cfg.umix.enabled;
        let train_row = MetricsRow {
            epoch,
            split: "train".into(),
            loss: stats.loss / n,
            accuracy: stats.correct as f64 / n,
            mean_u: umix.then(|| stats.u_sum / n),
            mean_w: umix.then(|| (stats.w_clean.0 + stats.w_noisy.0) / n),
            seconds: seconds(elapsed),
            selector_mode: selector,
        };
        if umix {
            let mean = |(s, c): (f64, usize)| if c == 0 { 0.0 } else { s / c as f64 };
            weights.push(WeightSummary {
                epoch,
                mean_w_clean: mean(stats.w_clean),
                mean_w_noisy: mean(stats.w_noisy),
                clean: stats.w_clean.1,
                noisy: stats.w_noisy.1,
            });
        }
        let val_start = Instant::now();
        let val = evaluate_samples(&model, &confusion, val_set, budget, selector, "val")?;
        let val_row = MetricsRow {
            epoch,
            split: "val".into(),
            loss: val.loss,
            accuracy: val.accuracy,
            mean_u: None,
            mean_w: None,
            seconds: seconds(val_start.elapsed().as_secs_f64()),
            selector_mode: selector,
        };
        if let Some(f) = files.as_mut() {
            f.append(&[train_row.clone(), val_row.clone()])?;
        }
        metrics.push(train_row);
        metrics.push(val_row);
        if best.as_ref().map_or(true, |(acc, _)| val.accuracy > *acc) {
            let ckpt = Checkpoint {
                model: model.clone(),
                confusion: confusion.clone(),
                config: cfg.clone(),
                epoch,
            };
            if let Some(f) = &files {
                ckpt.save(&f.dir.join("checkpoint.uaai"))?;
                confusion.write_csv(File::create(f.dir.join("confusion.csv"))?)?;
            }
            best = Some((val.accuracy, ckpt));
        }
    }

    let (best_val_accuracy, checkpoint) = best.expect("at least one epoch");
    let test_set = &dataset.split("test")?.samples;
    let test = if test_set.is_empty() {
        None
    } else {
        Some(evaluate_samples(&checkpoint.model, &checkpoint.confusion, test_set, budget, checkpoint.selector(), "test")?)
    };
    if let Some(f) = &files {
        if cfg.umix.enabled {
            let mut w = File::create(f.dir.join("weights.csv"))?;
            writeln!(w, "epoch,mean_w_clean,mean_w_noisy,clean,noisy")?;
            for s in &weights {
                writeln!(w, "{},{},{},{},{}", s.epoch, s.mean_w_clean, s.mean_w_noisy, s.clean, s.noisy)?;
            }
        }
        let summary = RunSummary {
            best_epoch: checkpoint.epoch,
            best_val_accuracy,
            test_accuracy: test.as_ref().map(|t| t.accuracy),
            train_seconds: if cfg.record_wall_clock { train_seconds } else { 0.0 },
            mc_passes: cfg.mc.passes,
            umix: cfg.umix.enabled,
            temporal_selection: cfg.temporal_selection,
            spatial_selection: cfg.spatial_selection,
            seed: cfg.seed,
            test: &test,
        };
        fs::write(f.dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        weights,
        train_seconds,
        test,
    })
}

struct Step<'a> {
    cfg: &'a TrainConfig,
    vfe: &'a VfeConfig,
    budget: usize,
    selector: SelectorMode,
    rng: RngStream,
}

impl Step<'_> {
    fn run(
        &self,
        model: &mut Model<f32>,
        adam: &mut AdamState<f32>,
        confusion: &mut ConfusionModel,
        batch: &[&SequenceSample],
        stats: &mut EpochStats,
    ) -> Result<()> {
        let cfg = self.cfg;
        let s = self.budget;
        let n = batch.len();
        let mut rng = RngStream::new(0, 0);

        // Select frames, predict from them in infer mode, and collect the
        // per-frame decisions for the confusion model.
        let mut frame_data = Vec::new();
        let mut decisions = Vec::with_capacity(n);
        for sample in batch {
            let mode = match cfg.efe_mode {
                EfeVariant::InfoGain => EfeMode::info_gain(),
                EfeVariant::LabelTarget => EfeMode::label_target(sample.label),
            };
            let sel = select_sequence(model, confusion, sample, s, self.selector, &mode)?;
            let (emb, frame_preds) = match &sel.view {
                Some(view) => (view.gather(&sel.indices), sel.indices.iter().map(|&i| view.softmaxes[i].argmax()).collect()),
                None => {
                    let emb = model.embed(&sequence_frames(sample, Some(&sel.indices)), Mode::Infer, &mut rng)?;
                    let logits = model.classify(&emb, Mode::Infer, &mut rng)?;
                    let k = logits.shape()[1];
                    let preds: Vec<usize> = logits
                        .data()
                        .chunks(k)
                        .map(|r| argmax(&r.iter().map(|&v| v as f64).collect::<Vec<_>>()))
                        .collect();
                    (emb, preds)
                }
            };
            let logits = model.classify(&mean_pool(&emb, s)?, Mode::Infer, &mut rng)?;
            let pred = argmax(&logits.data().iter().map(|&v| v as f64).collect::<Vec<_>>());
            stats.correct += usize::from(pred == sample.label);
            decisions.push(frame_preds);
            frame_data.extend(sequence_frames::<f32>(sample, Some(&sel.indices)).into_data());
        }
        let g = model.grid();
        let x = NumArray::new(vec![n * s, 1, g, g], frame_data)?;

        let (logits, trace, losses) = if cfg.umix.enabled {
            let mc_model;
            let mc = if cfg.mc.dropout_rate == cfg.model.dropout {
                &*model
            } else {
                mc_model = model.with_dropout_rate(cfg.mc.dropout_rate);
                &mc_model
            };
            let scores = mc_uncertainty_with(&cfg.mc, &self.rng.child(0), |r| {
                softmax_rows(&mc.sequence_logits(&x, s, Mode::Train, r)?)
            })?;
            let w = scores
                .iter()
                .map(|sc| weight_with_rule(sc.u, cfg.umix.weight_rule, cfg.umix.alpha, cfg.umix.beta))
                .collect::<Result<Vec<_>>>()?;
            for (sample, (sc, wi)) in batch.iter().zip(scores.iter().zip(&w)) {
                stats.u_sum += sc.u;
                let slot = if sample.noisy_label { &mut stats.w_noisy } else { &mut stats.w_clean };
                slot.0 += wi.w;
                slot.1 += 1;
            }
            let lambda = sample_lambda(cfg.umix.alpha_mix, &mut self.rng.child(1))?;
            let partners = batch_partners(n);
            let block = s * g * g;
            let mut mixed = x.clone();
            for (i, &j) in partners.iter().enumerate() {
                mix_into(&mut mixed.data_mut()[i * block..(i + 1) * block], &x.data()[j * block..(j + 1) * block], lambda);
            }
            let (logits, trace) = model.forward_sequences(&mixed, s, Mode::Train, &mut self.rng.child(2))?;
            let losses = (0..n)
                .map(|i| {
                    let j = partners[i];
                    let pair = MixedSample::<f32> {
                        x_mixed: NumArray::zeros(vec![0]),
                        y_i: batch[i].label,
                        y_j: batch[j].label,
                        lambda,
                        w_i: w[i].w,
                        w_j: w[j].w,
                    };
                    umix_loss_with_grad(&row(&logits, i), &pair)
                })
                .collect::<Result<Vec<_>>>()?;
            (logits, trace, losses)
        } else {
            let (logits, trace) = model.forward_sequences(&x, s, Mode::Train, &mut self.rng.child(2))?;
            let losses = (0..n)
                .map(|i| vfe_loss_with_grad(&row(&logits, i), batch[i].label, self.vfe))
                .collect::<Result<Vec<_>>>()?;
            (logits, trace, losses)
        };

        let loss: f64 = losses.iter().map(|(l, _)| l).sum::<f64>() / n as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch: 0, batch: 0, loss });
        }
        stats.loss += loss * n as f64;
        stats.seen += n;
        let grad: Vec<f32> = losses.iter().flat_map(|(_, g)| g.iter().map(|&v| (v / n as f64) as f32)).collect();
        let d_logits = NumArray::new(logits.shape().to_vec(), grad)?;
        let grads = model.backward_sequences(trace, &d_logits)?;
        adam_step(&mut model.params, &grads, adam)?;

        for (sample, preds) in batch.iter().zip(decisions) {
            for p in preds {
                confusion.update(p, sample.label)?;
            }
        }
        Ok(())
    }
}

fn row(logits: &NumArray<f32>, i: usize) -> Vec<f64> {
    let k = logits.shape()[1];
    logits.data()[i * k..(i + 1) * k].iter().map(|&v| v as f64).collect()
}

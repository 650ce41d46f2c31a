//! Synthetic sparse-signal sequence benchmark and its on-disk format.
//!
//! Every sequence is unit-variance noise. In a few frames a class-specific
//! patch pattern is added at a class-specific location. Each subject applies
//! its own gain and offset to all of its frames, subjects never cross
//! splits, and training labels are flipped at a configurable rate.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container::{self, OffsetReader};
use crate::error::{Error, Result};
use crate::numkit::{NumArray, RngStream};

pub const DATASET_VERSION: u16 = 1;
/// File name used when a dataset path names a directory.
pub const DATASET_FILE: &str = "dataset.uaai";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub frames: usize,
    pub grid: usize,
    pub signal_frames: usize,
    pub patch_size: usize,
    /// Peak patch amplitude in units of the background noise deviation.
    pub snr: f64,
    pub label_noise: f64,
    pub num_subjects: usize,
    pub gain_range: [f64; 2],
    pub offset_range: [f64; 2],
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            train_per_class: 100,
            val_per_class: 50,
            test_per_class: 50,
            frames: 32,
            grid: 16,
            signal_frames: 4,
            patch_size: 4,
            snr: 3.0,
            label_noise: 0.1,
            num_subjects: 10,
            gain_range: [0.85, 1.15],
            offset_range: [-1.0, 1.0],
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be ≥ 2, got {}", self.num_classes));
        }
        if self.frames == 0 || self.signal_frames == 0 || self.signal_frames > self.frames {
            return bad(format!(
                "need 1 ≤ signal_frames ≤ frames, got {} and {}",
                self.signal_frames, self.frames
            ));
        }
        if self.patch_size == 0 || self.patch_size > self.grid {
            return bad(format!("patch of size {} does not fit a {} grid", self.patch_size, self.grid));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad(format!("label_noise {} outside [0, 1]", self.label_noise));
        }
        if !(self.snr >= 0.0 && self.snr.is_finite()) {
            return bad(format!("snr must be finite and ≥ 0, got {}", self.snr));
        }
        if self.num_subjects < 3 {
            return bad(format!("num_subjects must be ≥ 3 for disjoint splits, got {}", self.num_subjects));
        }
        for (name, [lo, hi]) in [("gain_range", self.gain_range), ("offset_range", self.offset_range)] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return bad(format!("{name} [{lo}, {hi}] is not an interval"));
            }
        }
        if self.train_per_class + self.val_per_class + self.test_per_class == 0 {
            return bad("all splits are empty".into());
        }
        Ok(())
    }

    pub fn per_class(&self, split: &str) -> usize {
        match split {
            "train" => self.train_per_class,
            "val" => self.val_per_class,
            _ => self.test_per_class,
        }
    }

    /// Subject ids assigned to each split: val and test each get a fifth
    /// (at least one), train gets the rest.
    pub fn subject_partition(&self) -> [Vec<usize>; 3] {
        let held = (self.num_subjects / 5).max(1);
        let train = self.num_subjects - 2 * held;
        [
            (0..train).collect(),
            (train..train + held).collect(),
            (train + held..self.num_subjects).collect(),
        ]
    }

    pub fn frame_len(&self) -> usize {
        self.grid * self.grid
    }

    pub fn sample_len(&self) -> usize {
        self.frames * self.frame_len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    /// `[frames, grid, grid]`.
    pub frames: NumArray<f32>,
    pub label: usize,
    pub clean_label: usize,
    pub subject_id: usize,
    /// Sorted indices of the frames carrying the class signal.
    pub planted_frames: Vec<usize>,
    pub planted_patch: (usize, usize),
    pub noisy_label: bool,
}

impl SequenceSample {
    pub fn frame(&self, t: usize) -> &[f32] {
        let len = self.frames.shape()[1] * self.frames.shape()[2];
        &self.frames.data()[t * len..(t + 1) * len]
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub name: String,
    pub samples: Vec<SequenceSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: GeneratorConfig,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&Split> {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::InvalidInput(format!("dataset has no split named {name:?}")))
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }
}

struct ClassSignal {
    pattern: Vec<f32>,
    origin: (usize, usize),
}

fn class_signals(cfg: &GeneratorConfig, rng: &RngStream) -> Vec<ClassSignal> {
    let p = cfg.patch_size;
    let mut r = rng.child(0);
    let positions = cfg.grid - p + 1;
    (0..cfg.num_classes)
        .map(|_| {
            // Peak amplitude `snr` relative to the unit noise deviation.
            let raw: Vec<f64> = (0..p * p).map(|_| 2.0 * r.uniform() - 1.0).collect();
            let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            ClassSignal {
                pattern: raw.iter().map(|v| (cfg.snr * v / peak) as f32).collect(),
                origin: (r.below(positions), r.below(positions)),
            }
        })
        .collect()
}

fn lerp([lo, hi]: [f64; 2], u: f64) -> f64 {
    lo + (hi - lo) * u
}

/// Generates the train, val, and test splits. Fully determined by `cfg`.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, 0);
    let signals = class_signals(cfg, &root);
    let mut subject_rng = root.child(1);
    let subjects: Vec<(f64, f64)> = (0..cfg.num_subjects)
        .map(|_| (lerp(cfg.gain_range, subject_rng.uniform()), lerp(cfg.offset_range, subject_rng.uniform())))
        .collect();
    let partition = cfg.subject_partition();
    let (g, p, k) = (cfg.grid, cfg.patch_size, cfg.num_classes);

    let mut splits = Vec::new();
    for (si, name) in SPLITS.iter().enumerate() {
        let split_rng = root.child(2 + si as u64);
        let ids = &partition[si];
        let mut samples = Vec::with_capacity(k * cfg.per_class(name));
        for n in 0..cfg.per_class(name) {
            for label in 0..k {
                let index = samples.len();
                let mut r = split_rng.child(index as u64);
                // Cycles through the split's subjects within each class, so
                // subject identity carries no class information.
                let subject_id = ids[(n + label) % ids.len()];
                let (gain, offset) = subjects[subject_id];
                let mut planted_frames = r.choose_distinct(cfg.frames, cfg.signal_frames);
                planted_frames.sort_unstable();
                let signal = &signals[label];
                let mut data: Vec<f32> = (0..cfg.sample_len()).map(|_| r.normal() as f32).collect();
                for &t in &planted_frames {
                    let frame = &mut data[t * g * g..(t + 1) * g * g];
                    for dy in 0..p {
                        for dx in 0..p {
                            frame[(signal.origin.0 + dy) * g + signal.origin.1 + dx] += signal.pattern[dy * p + dx];
                        }
                    }
                }
                for v in &mut data {
                    *v = (gain * *v as f64 + offset) as f32;
                }
                let mut observed = label;
                let mut noisy = false;
                if *name == "train" && cfg.label_noise > 0.0 && r.bernoulli(cfg.label_noise) {
                    observed = (label + 1 + r.below(k - 1)) % k;
                    noisy = true;
                }
                samples.push(SequenceSample {
                    frames: NumArray::new(vec![cfg.frames, g, g], data)?,
                    label: observed,
                    clean_label: label,
                    subject_id,
                    planted_frames,
                    planted_patch: signal.origin,
                    noisy_label: noisy,
                });
            }
        }
        splits.push(Split {
            name: name.to_string(),
            samples,
        });
    }
    Ok(Dataset {
        config: cfg.clone(),
        splits,
    })
}

/// Per-frame energy: sum of squared deviations from the frame mean.
pub fn frame_energy(frame: &[f32]) -> f64 {
    let mean = frame.iter().map(|&v| v as f64).sum::<f64>() / frame.len() as f64;
    frame.iter().map(|&v| (v as f64 - mean).powi(2)).sum()
}

/// Mean over sequences of the AUC with which [`frame_energy`] ranks planted
/// frames above the others (ties count one half).
pub fn energy_detector_auc(samples: &[SequenceSample]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for s in samples {
        let energies: Vec<f64> = (0..s.num_frames()).map(|t| frame_energy(s.frame(t))).collect();
        let (mut wins, mut pairs) = (0.0, 0.0);
        for &pt in &s.planted_frames {
            for (t, &e) in energies.iter().enumerate() {
                if s.planted_frames.binary_search(&t).is_ok() {
                    continue;
                }
                pairs += 1.0;
                wins += match energies[pt].partial_cmp(&e) {
                    Some(std::cmp::Ordering::Greater) => 1.0,
                    Some(std::cmp::Ordering::Equal) => 0.5,
                    _ => 0.0,
                };
            }
        }
        if pairs > 0.0 {
            total += wins / pairs;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SampleRecord {
    /// Byte offset of the frame payload, counted from the end of the manifest.
    offset: u64,
    label: usize,
    clean_label: usize,
    subject: usize,
    noisy: bool,
    planted_frames: Vec<usize>,
    planted_patch: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SplitRecord {
    name: String,
    samples: Vec<SampleRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DatasetManifest {
    version: u16,
    config: GeneratorConfig,
    splits: Vec<SplitRecord>,
}

/// Resolves a dataset path: directories hold [`DATASET_FILE`].
pub fn dataset_file(path: &Path) -> PathBuf {
    if path.is_dir() || path.extension().is_none() {
        path.join(DATASET_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn write_dataset_to<W: Write>(mut w: W, dataset: &Dataset) -> Result<()> {
    let bytes = dataset.config.sample_len() as u64 * 4;
    let mut offset = 0;
    let mut splits = Vec::new();
    for split in &dataset.splits {
        let mut samples = Vec::new();
        for s in &split.samples {
            if s.frames.len() as u64 * 4 != bytes {
                return Err(Error::shape("write_dataset", format!("sample frames {:?} disagree with config", s.frames.shape())));
            }
            samples.push(SampleRecord {
                offset,
                label: s.label,
                clean_label: s.clean_label,
                subject: s.subject_id,
                noisy: s.noisy_label,
                planted_frames: s.planted_frames.clone(),
                planted_patch: s.planted_patch,
            });
            offset += bytes;
        }
        splits.push(SplitRecord {
            name: split.name.clone(),
            samples,
        });
    }
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        config: dataset.config.clone(),
        splits,
    };
    container::write_header(&mut w, DATASET_VERSION, &serde_json::to_vec(&manifest)?)?;
    for split in &dataset.splits {
        for s in &split.samples {
            container::write_f32s(&mut w, s.frames.data())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_from<R: Read>(r: R) -> Result<Dataset> {
    let mut r = OffsetReader::new(r);
    let manifest: DatasetManifest = container::parse_manifest(&container::read_header(&mut r, DATASET_VERSION)?)?;
    let header_end = r.offset();
    if manifest.version != DATASET_VERSION {
        return Err(Error::format(10, format!("manifest version {} disagrees with header", manifest.version)));
    }
    let cfg = manifest.config;
    let count = cfg.sample_len();
    let mut expected = 0u64;
    let mut splits = Vec::new();
    for split in manifest.splits {
        let mut samples = Vec::with_capacity(split.samples.len());
        for rec in split.samples {
            if rec.offset != expected {
                return Err(Error::format(
                    header_end + expected,
                    format!("sample offset {} in split {} does not follow the previous payload", rec.offset, split.name),
                ));
            }
            if rec.label >= cfg.num_classes || rec.clean_label >= cfg.num_classes {
                return Err(Error::format(header_end + expected, format!("label out of range in split {}", split.name)));
            }
            let data = r.read_f32s(count, &format!("{} sample payload", split.name))?;
            expected += count as u64 * 4;
            samples.push(SequenceSample {
                frames: NumArray::new(vec![cfg.frames, cfg.grid, cfg.grid], data)?,
                label: rec.label,
                clean_label: rec.clean_label,
                subject_id: rec.subject,
                planted_frames: rec.planted_frames,
                planted_patch: rec.planted_patch,
                noisy_label: rec.noisy,
            });
        }
        splits.push(Split {
            name: split.name,
            samples,
        });
    }
    r.expect_end()?;
    Ok(Dataset { config: cfg, splits })
}

/// Writes to `path`, or to `path/dataset.uaai` when `path` is a directory.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<PathBuf> {
    let file = dataset_file(path);
    if let Some(parent) = file.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_dataset_to(BufWriter::new(File::create(&file)?), dataset)?;
    Ok(file)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_from(BufReader::new(File::open(dataset_file(path))?))
}

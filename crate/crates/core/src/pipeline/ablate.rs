use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::Dataset;

use super::{train, TrainConfig, TrainOutcome};

pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_SUMMARY_FILE: &str = "ablation_summary.csv";
pub const ABLATION_HEADER: &str =
    "row,umix,temporal_selection,spatial_selection,seed,test_accuracy,val_accuracy,best_epoch,train_seconds";

/// One module combination of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: &'static str,
    pub umix: bool,
    pub temporal_selection: bool,
    pub spatial_selection: bool,
}

pub const ABLATION_ROWS: [AblationRow; 5] = [
    AblationRow::new("baseline", false, false, false),
    AblationRow::new("uncertainty", true, false, false),
    AblationRow::new("temporal", false, true, false),
    AblationRow::new("spatial", false, false, true),
    AblationRow::new("full", true, true, true),
];

impl AblationRow {
    pub const fn new(name: &'static str, umix: bool, temporal_selection: bool, spatial_selection: bool) -> Self {
        Self {
            name,
            umix,
            temporal_selection,
            spatial_selection,
        }
    }

    pub fn config(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        let mut cfg = base.with_flags(self.umix, self.temporal_selection, self.spatial_selection);
        cfg.seed = seed;
        cfg
    }

    pub fn run_name(&self, seed: u64) -> String {
        format!("{}_seed{}", self.name, seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub row: String,
    pub umix: bool,
    pub temporal_selection: bool,
    pub spatial_selection: bool,
    pub seed: u64,
    pub test_accuracy: f64,
    pub val_accuracy: f64,
    pub best_epoch: usize,
    pub train_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationMean {
    pub row: String,
    pub mean_test_accuracy: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationTable {
    pub runs: Vec<AblationRun>,
}

impl AblationTable {
    /// Mean test accuracy per row, in table order.
    pub fn means(&self) -> Vec<AblationMean> {
        let mut out: Vec<AblationMean> = Vec::new();
        for r in &self.runs {
            match out.iter_mut().find(|m| m.row == r.row) {
                Some(m) => {
                    m.mean_test_accuracy += r.test_accuracy;
                    m.runs += 1;
                }
                None => out.push(AblationMean {
                    row: r.row.clone(),
                    mean_test_accuracy: r.test_accuracy,
                    runs: 1,
                }),
            }
        }
        for m in &mut out {
            m.mean_test_accuracy /= m.runs as f64;
        }
        out
    }

    pub fn mean(&self, row: &str) -> Option<f64> {
        self.means().into_iter().find(|m| m.row == row).map(|m| m.mean_test_accuracy)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{ABLATION_HEADER}")?;
        for r in &self.runs {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{:.3}",
                r.row,
                u8::from(r.umix),
                u8::from(r.temporal_selection),
                u8::from(r.spatial_selection),
                r.seed,
                r.test_accuracy,
                r.val_accuracy,
                r.best_epoch,
                r.train_seconds
            )?;
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row,mean_test_accuracy,runs")?;
        for m in self.means() {
            writeln!(w, "{},{},{}", m.row, m.mean_test_accuracy, m.runs)?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(ABLATION_HEADER) {
            return Err(Error::InvalidInput("ablation table lacks its header".into()));
        }
        let runs = lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let c: Vec<&str> = line.split(',').collect();
                let bad = || Error::InvalidInput(format!("malformed ablation row {line:?}"));
                if c.len() != 9 {
                    return Err(bad());
                }
                let flag = |s: &str| match s {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    _ => Err(bad()),
                };
                Ok(AblationRun {
                    row: c[0].to_string(),
                    umix: flag(c[1])?,
                    temporal_selection: flag(c[2])?,
                    spatial_selection: flag(c[3])?,
                    seed: c[4].parse().map_err(|_| bad())?,
                    test_accuracy: c[5].parse().map_err(|_| bad())?,
                    val_accuracy: c[6].parse().map_err(|_| bad())?,
                    best_epoch: c[7].parse().map_err(|_| bad())?,
                    train_seconds: c[8].parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { runs })
    }
}

/// Trains every ablation row for every seed. With `out_dir`, each run gets
/// its own subdirectory and the tables are written alongside them.
///
/// `on_run` sees each finished run, e.g. to log progress or keep the outcome.
pub fn ablate(
    base: &TrainConfig,
    dataset: &Dataset,
    seeds: &[u64],
    out_dir: Option<&Path>,
    mut on_run: impl FnMut(&AblationRow, u64, &TrainOutcome),
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one seed".into()));
    }
    base.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut table = AblationTable::default();
    for row in &ABLATION_ROWS {
        for &seed in seeds {
            let cfg = row.config(base, seed);
            let run_dir = out_dir.map(|d| d.join(row.run_name(seed)));
            let outcome = train(&cfg, dataset, run_dir.as_deref())?;
            let val_accuracy = outcome
                .metrics
                .iter()
                .find(|m| m.split == "val" && m.epoch == outcome.checkpoint.epoch)
                .map_or(0.0, |m| m.accuracy);
            table.runs.push(AblationRun {
                row: row.name.to_string(),
                umix: row.umix,
                temporal_selection: row.temporal_selection,
                spatial_selection: row.spatial_selection,
                seed,
                test_accuracy: outcome.test.as_ref().map_or(0.0, |t| t.accuracy),
                val_accuracy,
                best_epoch: outcome.checkpoint.epoch,
                train_seconds: if cfg.record_wall_clock { outcome.train_seconds } else { 0.0 },
            });
            on_run(row, seed, &outcome);
            if let Some(dir) = out_dir {
                table.write_csv(File::create(dir.join(ABLATION_FILE))?)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        table.write_summary_csv(File::create(dir.join(ABLATION_SUMMARY_FILE))?)?;
    }
    Ok(table)
}

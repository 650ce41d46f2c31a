use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::ablate::{AblationTable, ABLATION_FILE};
use super::train::{read_metrics, MetricsRow};
use super::TrainConfig;

pub const REPORT_DIR: &str = "report";
const UNCERTAINTY_HEADER: &str = "sample_id,u,w,noisy_label_flag";

/// One training run found under a report root.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub name: String,
    pub dir: PathBuf,
    pub config: TrainConfig,
    pub metrics: Vec<MetricsRow>,
    pub best_epoch: Option<usize>,
    pub test_accuracy: Option<f64>,
    pub train_seconds: Option<f64>,
}

impl RunRecord {
    fn load(name: String, dir: &Path) -> Result<Self> {
        let config = TrainConfig::load(&dir.join("config.json"))?;
        let metrics = read_metrics(&dir.join("metrics.csv"))?;
        let summary: Option<serde_json::Value> = match fs::read_to_string(dir.join("summary.json")) {
            Ok(text) => Some(serde_json::from_str(&text)?),
            Err(_) => None,
        };
        let field = |k: &str| summary.as_ref().and_then(|s| s.get(k)).and_then(|v| v.as_f64());
        Ok(Self {
            name,
            dir: dir.to_path_buf(),
            config,
            metrics,
            best_epoch: field("best_epoch").map(|e| e as usize),
            test_accuracy: field("test_accuracy"),
            train_seconds: field("train_seconds"),
        })
    }

    pub fn epochs(&self) -> usize {
        self.metrics.iter().map(|m| m.epoch).max().unwrap_or(0)
    }

    fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy,selector_mode\n");
        for epoch in 1..=self.epochs() {
            let pick = |split: &str| self.metrics.iter().find(|m| m.epoch == epoch && m.split == split);
            let cell = |m: Option<&MetricsRow>, f: fn(&MetricsRow) -> f64| m.map(|m| f(m).to_string()).unwrap_or_default();
            let (train, val) = (pick("train"), pick("val"));
            let mode = train.or(val).map_or("", |m| m.selector_mode.as_str());
            let _ = writeln!(
                out,
                "{epoch},{},{},{},{},{mode}",
                cell(train, |m| m.loss),
                cell(train, |m| m.accuracy),
                cell(val, |m| m.loss),
                cell(val, |m| m.accuracy),
            );
        }
        out
    }
}

/// Files written by [`report`], relative to the run root.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub curves: Vec<PathBuf>,
    pub ablation: Option<PathBuf>,
    pub mc_cost: PathBuf,
}

/// Training runs under `root`: the root itself when it holds a
/// `metrics.csv`, then every subdirectory that does, by name.
pub fn discover_runs(root: &Path) -> Result<Vec<RunRecord>> {
    if !root.is_dir() {
        return Err(Error::InvalidInput(format!("{} is not a directory", root.display())));
    }
    let mut runs = Vec::new();
    if root.join("metrics.csv").is_file() {
        let name = root.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned());
        runs.push(RunRecord::load(name, root)?);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.csv").is_file())
        .collect();
    subdirs.sort();
    for dir in subdirs {
        let name = dir.file_name().expect("entries have names").to_string_lossy().into_owned();
        runs.push(RunRecord::load(name, &dir)?);
    }
    if runs.is_empty() {
        return Err(Error::InvalidInput(format!("no metrics.csv under {}", root.display())));
    }
    Ok(runs)
}

/// Summarizes the runs under `root` into `root/report/`: `summary.md`,
/// one `curves_<run>.csv` per run, `mc_cost.csv`, and a verbatim copy of
/// the ablation table when present. Output depends only on the inputs.
pub fn report(root: &Path) -> Result<ReportFiles> {
    let runs = discover_runs(root)?;
    let out = root.join(REPORT_DIR);
    fs::create_dir_all(&out)?;
    let mut md = String::from("# Run report\n\n");

    md.push_str("## Runs\n\n| run | umix | temporal | spatial | seed | epochs | best epoch | final train loss | final val acc | test acc |\n|---|---|---|---|---|---|---|---|---|---|\n");
    let mut curves = Vec::new();
    for r in &runs {
        let last = |split: &str| r.metrics.iter().rev().find(|m| m.split == split);
        let opt = |v: Option<f64>| v.map_or("".into(), |x| format!("{x:.4}"));
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.name,
            u8::from(r.config.umix.enabled),
            u8::from(r.config.temporal_selection),
            u8::from(r.config.spatial_selection),
            r.config.seed,
            r.epochs(),
            r.best_epoch.map_or("".into(), |e| e.to_string()),
            opt(last("train").map(|m| m.loss)),
            opt(last("val").map(|m| m.accuracy)),
            opt(r.test_accuracy),
        );
        let path = out.join(format!("curves_{}.csv", r.name));
        fs::write(&path, r.curve_csv())?;
        curves.push(path);
    }

    let ablation = match fs::read_to_string(root.join(ABLATION_FILE)) {
        Ok(text) => {
            let table = AblationTable::read_csv(&text)?;
            let path = out.join(ABLATION_FILE);
            fs::write(&path, &text)?;
            md.push_str("\n## Ablation\n\n");
            let mut lines = text.lines();
            if let Some(header) = lines.next() {
                let cols = header.split(',').count();
                let _ = writeln!(md, "| {} |", header.replace(',', " | "));
                let _ = writeln!(md, "|{}", "---|".repeat(cols));
                for line in lines.filter(|l| !l.is_empty()) {
                    let _ = writeln!(md, "| {} |", line.replace(',', " | "));
                }
            }
            md.push_str("\n| row | mean test accuracy | runs |\n|---|---|---|\n");
            for m in table.means() {
                let _ = writeln!(md, "| {} | {:.4} | {} |", m.row, m.mean_test_accuracy, m.runs);
            }
            Some(path)
        }
        Err(_) => None,
    };

    let mc_cost = out.join("mc_cost.csv");
    fs::write(&mc_cost, mc_cost_csv(&runs))?;
    md.push_str("\n## MC cost\n\nTraining wall-clock of uncertainty-weighted runs, grouped by MC passes.\n\n");
    let cost = mc_cost_csv(&runs);
    let mut lines = cost.lines();
    lines.next();
    md.push_str("| mc passes | runs | mean train seconds | mean seconds per epoch |\n|---|---|---|---|\n");
    for line in lines {
        let _ = writeln!(md, "| {} |", line.replace(',', " | "));
    }

    md.push_str("\n## Uncertainty\n\n");
    md.push_str(&uncertainty_section(root, &runs)?);

    let summary = out.join("summary.md");
    fs::write(&summary, md)?;
    Ok(ReportFiles {
        summary,
        curves,
        ablation,
        mc_cost,
    })
}

fn mc_cost_csv(runs: &[RunRecord]) -> String {
    let mut groups: Vec<(usize, Vec<(f64, usize)>)> = Vec::new();
    for r in runs.iter().filter(|r| r.config.umix.enabled) {
        let Some(secs) = r.train_seconds else { continue };
        let passes = r.config.mc.passes;
        let entry = (secs, r.epochs().max(1));
        match groups.iter_mut().find(|(p, _)| *p == passes) {
            Some((_, v)) => v.push(entry),
            None => groups.push((passes, vec![entry])),
        }
    }
    groups.sort_by_key(|(p, _)| *p);
    let mut out = String::from("mc_passes,runs,mean_train_seconds,mean_seconds_per_epoch\n");
    for (passes, v) in groups {
        let n = v.len() as f64;
        let total: f64 = v.iter().map(|(s, _)| s).sum();
        let per_epoch: f64 = v.iter().map(|(s, e)| s / *e as f64).sum();
        let _ = writeln!(out, "{passes},{},{:.3},{:.3}", v.len(), total / n, per_epoch / n);
    }
    out
}

fn uncertainty_section(root: &Path, runs: &[RunRecord]) -> Result<String> {
    let mut md = String::new();
    let mut rows = Vec::new();
    for r in runs {
        let Ok(text) = fs::read_to_string(r.dir.join("weights.csv")) else { continue };
        let parsed: Vec<Vec<f64>> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect())
            .collect();
        if let (Some(first), Some(last)) = (parsed.first(), parsed.last()) {
            rows.push(format!(
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                r.name, first[1], first[2], last[1], last[2]
            ));
        }
    }
    if rows.is_empty() {
        md.push_str("No uncertainty-weighted runs.\n");
    } else {
        md.push_str("Mean weight of clean and noisy-labelled training samples.\n\n| run | first epoch clean | first epoch noisy | last epoch clean | last epoch noisy |\n|---|---|---|---|---|\n");
        for row in rows {
            md.push_str(&row);
            md.push('\n');
        }
    }

    let mut dumps: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .filter(|p| fs::read_to_string(p).is_ok_and(|t| t.lines().next() == Some(UNCERTAINTY_HEADER)))
        .collect();
    dumps.sort();
    if !dumps.is_empty() {
        md.push_str("\n| dump | samples | mean u | mean w | mean w clean | mean w noisy |\n|---|---|---|---|---|---|\n");
        for path in dumps {
            let text = fs::read_to_string(&path)?;
            let (mut n, mut u, mut w) = (0usize, 0.0, 0.0);
            let (mut clean, mut noisy) = ((0.0, 0usize), (0.0, 0usize));
            for line in text.lines().skip(1) {
                let c: Vec<&str> = line.split(',').collect();
                let bad = || Error::InvalidInput(format!("malformed uncertainty row {line:?} in {}", path.display()));
                if c.len() != 4 {
                    return Err(bad());
                }
                let (ui, wi): (f64, f64) = (c[1].parse().map_err(|_| bad())?, c[2].parse().map_err(|_| bad())?);
                n += 1;
                u += ui;
                w += wi;
                match c[3] {
                    "1" => noisy = (noisy.0 + wi, noisy.1 + 1),
                    "0" => clean = (clean.0 + wi, clean.1 + 1),
                    _ => {}
                }
            }
            let mean = |(s, c): (f64, usize)| if c == 0 { "".to_string() } else { format!("{:.4}", s / c as f64) };
            let nf = n.max(1) as f64;
            let _ = writeln!(
                md,
                "| {} | {n} | {:.4} | {:.4} | {} | {} |",
                path.file_name().expect("file").to_string_lossy(),
                u / nf,
                w / nf,
                mean(clean),
                mean(noisy)
            );
        }
    }
    Ok(md)
}

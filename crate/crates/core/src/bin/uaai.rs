use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use uaai::efe::write_selection_jsonl;
use uaai::pipeline::{ablate, evaluate, report, selection_records, train, uncertainty_rows, Checkpoint, TrainConfig};
use uaai::synthdata::{generate_dataset, read_dataset, write_dataset, Dataset, GeneratorConfig};
use uaai::uncertainty::write_uncertainty_csv;
use uaai::{Error, Result};

#[derive(Parser)]
#[command(name = "uaai", version, about = "Uncertainty-aware active inference on sparse frame sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory or file; falls back to the config's `data`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train the five ablation rows for every seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump EFE frame selections as JSON lines.
    Select {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump per-sample MC-dropout uncertainty and weights.
    Uncertainty {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a run or ablation directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { config, out } => {
            let cfg = GeneratorConfig::load(&config)?;
            let path = write_dataset(&generate_dataset(&cfg)?, &out)?;
            println!("{}", path.display());
        }
        Command::Train { config, data, out } => {
            let cfg = TrainConfig::load(&config)?;
            let dataset = load_data(data.as_deref(), &cfg)?;
            let outcome = train(&cfg, &dataset, Some(&out))?;
            println!(
                "best epoch {} test accuracy {}",
                outcome.checkpoint.epoch,
                outcome.test.map_or("n/a".into(), |t| format!("{:.4}", t.accuracy))
            );
        }
        Command::Eval { checkpoint, data, split } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let result = evaluate(&ckpt, &read_dataset(&data)?, &split)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Ablate { config, data, seeds, out } => {
            let cfg = TrainConfig::load(&config)?;
            let dataset = load_data(data.as_deref(), &cfg)?;
            let table = ablate(&cfg, &dataset, &seeds, Some(&out), |row, seed, o| {
                eprintln!(
                    "{} seed {seed}: test {:.4}",
                    row.name,
                    o.test.as_ref().map_or(f64::NAN, |t| t.accuracy)
                );
            })?;
            for m in table.means() {
                println!("{} {:.4}", m.row, m.mean_test_accuracy);
            }
        }
        Command::Select { checkpoint, data, split, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let dataset = read_dataset(&data)?;
            let records = selection_records(&ckpt, &dataset.split(&split)?.samples, dataset.config.frames)?;
            write_selection_jsonl(BufWriter::new(File::create(&out)?), &records)?;
        }
        Command::Uncertainty { checkpoint, data, split, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let dataset = read_dataset(&data)?;
            let rows = uncertainty_rows(&ckpt, &dataset.split(&split)?.samples, dataset.config.frames)?;
            write_uncertainty_csv(BufWriter::new(File::create(&out)?), &rows)?;
        }
        Command::Report { run } => {
            let files = report(&run)?;
            println!("{}", files.summary.display());
        }
    }
    Ok(())
}

fn load_data(flag: Option<&Path>, cfg: &TrainConfig) -> Result<Dataset> {
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::InvalidConfig("no dataset given: pass --data or set `data` in the config".into()))?;
    read_dataset(&path)
}

//! Runs the five ablation rows on a reduced benchmark for two seeds and
//! writes the markdown report next to the runs.

use uaai::pipeline::{ablate, report, TrainConfig};
use uaai::synthdata::{generate_dataset, GeneratorConfig};

fn main() -> uaai::Result<()> {
    let dataset = generate_dataset(&GeneratorConfig {
        num_classes: 4,
        train_per_class: 30,
        val_per_class: 10,
        test_per_class: 10,
        seed: 2,
        ..GeneratorConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs: 15,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let out = std::env::temp_dir().join("uaai_ablation_example");
    let table = ablate(&cfg, &dataset, &[1, 2], Some(&out), |row, seed, o| {
        println!("{:<12} seed {seed}: test {:.3}", row.name, o.test.as_ref().map_or(0.0, |t| t.accuracy));
    })?;
    for m in table.means() {
        println!("mean {:<12} {:.3}", m.row, m.mean_test_accuracy);
    }
    let files = report(&out)?;
    println!("report: {}", files.summary.display());
    Ok(())
}

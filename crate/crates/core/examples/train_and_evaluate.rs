//! Trains the full model for a few epochs on a reduced benchmark, reloads
//! the best checkpoint, and compares EFE and uniform-stride selection on the
//! test split.

use uaai::pipeline::{evaluate, evaluate_with, train, Checkpoint, SelectorMode, TrainConfig};
use uaai::synthdata::{generate_dataset, GeneratorConfig};

fn main() -> uaai::Result<()> {
    let data = GeneratorConfig {
        num_classes: 4,
        train_per_class: 40,
        val_per_class: 15,
        test_per_class: 15,
        seed: 1,
        ..GeneratorConfig::default()
    };
    let dataset = generate_dataset(&data)?;
    let cfg = TrainConfig {
        epochs: 12,
        learning_rate: 1e-3,
        seed: 1,
        ..TrainConfig::default()
    };
    let run_dir = std::env::temp_dir().join("uaai_train_example");
    let outcome = train(&cfg, &dataset, Some(&run_dir))?;
    for m in &outcome.metrics {
        println!(
            "epoch {:>2} {:<5} loss {:.4} accuracy {:.3} [{}]",
            m.epoch,
            m.split,
            m.loss,
            m.accuracy,
            m.selector_mode.as_str()
        );
    }

    let ckpt = Checkpoint::load(&run_dir.join("checkpoint.uaai"))?;
    let efe = evaluate(&ckpt, &dataset, "test")?;
    let stride = evaluate_with(&ckpt, &dataset, "test", SelectorMode::UniformStride)?;
    println!("best epoch {}", ckpt.epoch);
    println!(
        "test accuracy: efe {:.3} (planted recall {:.2}), stride {:.3} (planted recall {:.2})",
        efe.accuracy, efe.planted_recall, stride.accuracy, stride.planted_recall
    );
    println!("run files in {}", run_dir.display());
    Ok(())
}

#![allow(dead_code)]

use uaai::pipeline::{ModelConfig, TrainConfig};
use uaai::synthdata::{generate_dataset, Dataset, GeneratorConfig};

pub fn tiny_generator(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        num_classes: 3,
        train_per_class: 8,
        val_per_class: 4,
        test_per_class: 4,
        frames: 8,
        grid: 8,
        signal_frames: 2,
        patch_size: 3,
        num_subjects: 5,
        seed,
        ..GeneratorConfig::default()
    }
}

pub fn tiny_dataset(seed: u64) -> Dataset {
    generate_dataset(&tiny_generator(seed)).expect("valid generator config")
}

pub fn tiny_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        learning_rate: 1e-3,
        model: ModelConfig {
            channels: 3,
            embed: 8,
            hidden: 8,
            dropout: 0.3,
        },
        mc: uaai::uncertainty::McConfig {
            passes: 3,
            dropout_rate: 0.3,
        },
        record_wall_clock: false,
        seed: 1,
        ..TrainConfig::default()
    }
}

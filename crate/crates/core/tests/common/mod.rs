#![allow(dead_code)]

use std::path::Path;

use wiseft::datagen::{GenSpec, ShiftSpec};
use wiseft::harness::{BaselineGrid, ExperimentConfig, FitModels, NamedShift};
use wiseft::model::{Activation, ModelSpec};
use wiseft::train::{TrainConfig, TrainMode};

/// A config small enough to run the whole pipeline in well under a second.
pub fn tiny_config(out: &Path) -> ExperimentConfig {
    let train = |mode, epochs, seed| TrainConfig {
        mode,
        epochs,
        batch_size: 16,
        lr_max: 1e-2,
        warmup_steps: 2,
        seed,
        ..TrainConfig::default()
    };
    ExperimentConfig {
        gen: GenSpec {
            k: 3,
            d_in: 4,
            per_class_train: 20,
            per_class_test: 30,
            cluster_spread: 1.0,
            pretrain_style_count: 3,
            style_strength: 2.0,
            seed: 5,
        },
        model: ModelSpec {
            layer_widths: vec![4, 8, 6],
            activation: Activation::Relu,
            k: 3,
            normalize_features: true,
        },
        shifts: vec![
            NamedShift {
                name: "styled".into(),
                style: Some(1),
                spec: ShiftSpec::identity(),
            },
            NamedShift {
                name: "noisy".into(),
                style: None,
                spec: ShiftSpec {
                    noise_sigma: 0.5,
                    seed: 9,
                    ..ShiftSpec::identity()
                },
            },
        ],
        pretrain: train(TrainMode::End2end, 2, 1),
        finetune: train(TrainMode::LinearHead, 3, 2),
        baseline_grid: BaselineGrid {
            distill_alpha: vec![0.5],
            reg_to_init: vec![0.1],
            label_smoothing: vec![0.1],
            l1: vec![1e-3],
            weight_decay: vec![0.0],
        },
        fit_models: FitModels {
            epochs: vec![1, 2, 4],
            train: train(TrainMode::End2end, 1, 3),
        },
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

pub fn write_config(cfg: &ExperimentConfig, path: &Path) {
    std::fs::write(path, cfg.to_json()).unwrap();
}

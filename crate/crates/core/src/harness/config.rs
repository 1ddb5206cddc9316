//! Experiment configuration: a single versioned JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{GenSpec, ShiftSpec};
use crate::error::{Error, Result};
use crate::metrics::OverrideDenominator;
use crate::model::{Activation, ModelSpec};
use crate::rng::SplitMix64;
use crate::train::{TrainConfig, TrainMode};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedShift {
    pub name: String,
    /// Pre-training style applied to the reference test set before `spec`,
    /// making the shift a domain the pre-training mixture covers.
    #[serde(default)]
    pub style: Option<usize>,
    pub spec: ShiftSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Distill,
    RegToInit,
    LabelSmoothing,
    L1,
    Wd,
    RandomInterp,
    OseLogits,
    OseSoftmax,
    Ema,
}

/// Hyperparameter values tried by the trained baselines; one fine-tuning
/// run per value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineGrid {
    pub distill_alpha: Vec<f64>,
    pub reg_to_init: Vec<f64>,
    pub label_smoothing: Vec<f64>,
    pub l1: Vec<f64>,
    pub weight_decay: Vec<f64>,
}

impl Default for BaselineGrid {
    fn default() -> Self {
        Self {
            distill_alpha: vec![0.25, 0.5, 0.75],
            reg_to_init: vec![1e-3, 1e-2, 1e-1],
            label_smoothing: vec![0.05, 0.1, 0.2],
            l1: vec![1e-4, 1e-3],
            weight_decay: vec![0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmaConfig {
    pub decays: Vec<f64>,
}

/// Reference-only models trained from scratch; their (reference, shift)
/// accuracies define the effective-robustness baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitModels {
    pub epochs: Vec<usize>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub gen: GenSpec,
    pub model: ModelSpec,
    pub shifts: Vec<NamedShift>,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub alpha_grid: Vec<f64>,
    #[serde(default)]
    pub k_shot: Option<usize>,
    #[serde(default)]
    pub ema: Option<EmaConfig>,
    #[serde(default)]
    pub baselines_to_run: Vec<Baseline>,
    #[serde(default)]
    pub baseline_grid: BaselineGrid,
    pub fit_models: FitModels,
    /// Mixing coefficient used for the override analysis.
    pub diversity_alpha: f64,
    #[serde(default)]
    pub override_denominator: OverrideDenominator,
    pub output_dir: PathBuf,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let shift = |name: &str, style: Option<usize>, rotation_angle: f64, noise_sigma: f64, mean_shift: f64, mask_fraction: f64, seed: u64| {
            NamedShift {
                name: name.to_string(),
                style,
                spec: ShiftSpec {
                    rotation_angle,
                    noise_sigma,
                    mean_shift,
                    mask_fraction,
                    seed,
                },
            }
        };
        Self {
            version: CONFIG_VERSION,
            gen: GenSpec {
                k: 10,
                d_in: 16,
                per_class_train: 100,
                per_class_test: 300,
                cluster_spread: 1.0,
                pretrain_style_count: 8,
                style_strength: 10.0,
                seed: 1,
            },
            model: ModelSpec {
                layer_widths: vec![16, 128, 64],
                activation: Activation::Relu,
                k: 10,
                normalize_features: true,
            },
            shifts: vec![
                shift("style1_noise", Some(1), 0.0, 1.0, 0.0, 0.0, 100),
                shift("style2_mask", Some(2), 0.0, 0.0, 0.0, 0.25, 101),
                shift("style3_noise", Some(3), 0.0, 0.3, 0.0, 0.0, 102),
                shift("style4_mask", Some(4), 0.0, 0.0, 0.0, 0.125, 103),
                shift("novel", None, 1.0, 0.5, 1.0, 0.0, 104),
            ],
            pretrain: TrainConfig {
                mode: TrainMode::End2end,
                epochs: 1,
                batch_size: 64,
                lr_max: 3e-3,
                warmup_steps: 50,
                weight_decay: 0.1,
                seed: 11,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                mode: TrainMode::LinearHead,
                epochs: 10,
                batch_size: 32,
                lr_max: 1e-2,
                warmup_steps: 20,
                weight_decay: 0.1,
                seed: 12,
                ..TrainConfig::default()
            },
            alpha_grid: crate::ensemble::default_alpha_grid(),
            k_shot: None,
            ema: Some(EmaConfig {
                decays: vec![0.9, 0.99, 0.999],
            }),
            baselines_to_run: vec![
                Baseline::Distill,
                Baseline::RegToInit,
                Baseline::LabelSmoothing,
                Baseline::L1,
                Baseline::Wd,
                Baseline::RandomInterp,
                Baseline::OseLogits,
                Baseline::OseSoftmax,
                Baseline::Ema,
            ],
            baseline_grid: BaselineGrid::default(),
            fit_models: FitModels {
                epochs: vec![1, 2, 3, 5, 8, 12],
                train: TrainConfig {
                    mode: TrainMode::End2end,
                    epochs: 1,
                    batch_size: 32,
                    lr_max: 3e-3,
                    warmup_steps: 10,
                    weight_decay: 0.1,
                    seed: 13,
                    ..TrainConfig::default()
                },
            },
            diversity_alpha: 0.5,
            override_denominator: OverrideDenominator::AllSamples,
            output_dir: PathBuf::from("out"),
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}", self.version));
        }
        self.gen.validate()?;
        self.model.validate()?;
        if self.model.d_in() != self.gen.d_in || self.model.k != self.gen.k {
            return bad("model d_in/k must match gen d_in/k".into());
        }
        for s in &self.shifts {
            s.spec.validate().map_err(|e| Error::Config(format!("shift `{}`: {e}", s.name)))?;
            if s.style.is_some_and(|j| j >= self.gen.pretrain_style_count) {
                return bad(format!("shift `{}`: style index out of range", s.name));
            }
            if s.name.is_empty() || s.name == "ref" || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return bad(format!("invalid shift name `{}`", s.name));
            }
        }
        let mut names: Vec<&str> = self.shifts.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("shift names must be unique".into());
        }
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.fit_models.train.validate()?;
        let g = &self.alpha_grid;
        if g.first() != Some(&0.0) || g.last() != Some(&1.0) {
            return bad("alpha_grid must start at 0 and end at 1".into());
        }
        if g.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return bad("alpha_grid must be strictly increasing".into());
        }
        if !(0.0..=1.0).contains(&self.diversity_alpha) {
            return bad(format!("diversity_alpha {} outside [0, 1]", self.diversity_alpha));
        }
        if self.k_shot == Some(0) {
            return bad("k_shot must be positive".into());
        }
        if let Some(ema) = &self.ema {
            if ema.decays.iter().any(|b| !(0.0..1.0).contains(b)) {
                return bad("EMA decays must lie in [0, 1)".into());
            }
        }
        if self.fit_models.epochs.len() < 2 {
            return bad("fit_models needs at least two models".into());
        }
        Ok(())
    }

    /// Seed for a pipeline component, mixing `master_seed` with the
    /// component's own seed.
    pub fn derive_seed(&self, component: &str, local: u64) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in component.bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mut sm = SplitMix64::new(self.master_seed ^ h);
        sm.next_u64() ^ local
    }
}

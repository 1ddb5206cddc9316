//! Experiment stages: data, zero-shot proxy, fine-tuning, alpha sweep,
//! diversity, robustness and baselines.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Baseline, ExperimentConfig};
use super::sweep::{averages, AlphaSweep, SweepRow};
use crate::checkpoint::{ema_final, interpolate, Checkpoint, CheckpointMeta, EmaState, EmaVariant};
use crate::datagen::{
    apply_shift, gen_pretrain_heldout, gen_pretrain_mixture, gen_reference, subsample_per_class, Dataset,
};
use crate::ensemble::{mix_logits, mix_softmax, random_interp_predict};
use crate::error::{Error, Result};
use crate::metrics::{
    accuracy_eval, ckac_subsampled, clamp_accuracy, cohens_kappa_complement, effective_robustness, fit_baseline,
    margin_stats, mean_kl, observation1_check, override_analysis, prediction_diversity, DiversityReport, EvalResult,
    ObservationCheck, RobustnessFit, CKA_ROW_CAP,
};
use crate::model::{build_zero_shot_head, class_prototypes, predict, with_head, ModelSpec, Network};
use crate::train::{finetune_with_hook, TrainConfig, TrainTrace};

/// Runs `f`, wrapping any error with the stage name.
pub fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    info!("stage {name}");
    f().map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name,
            source: Box::new(e),
        },
    })
}

/// Seeds and datasets of one experiment. Every seed in `config` has already
/// been mixed with `master_seed`.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub init_seed: u64,
    pub subsample_seed: u64,
    pub random_interp_seed: u64,
    pub cka_seed: u64,
    pub ref_train: Dataset,
    pub ref_test: Dataset,
    pub shifts: Vec<Dataset>,
    pub pretrain: Dataset,
    pub heldout: Dataset,
}

impl Experiment {
    /// Validates the config, derives component seeds and generates data.
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        stage("data", || {
            config.validate()?;
            let mut cfg = config.clone();
            cfg.gen.seed = config.derive_seed("gen", config.gen.seed);
            for s in &mut cfg.shifts {
                s.spec.seed = config.derive_seed("shift", s.spec.seed);
            }
            cfg.pretrain.seed = config.derive_seed("pretrain", config.pretrain.seed);
            cfg.finetune.seed = config.derive_seed("finetune", config.finetune.seed);
            cfg.fit_models.train.seed = config.derive_seed("fit_models", config.fit_models.train.seed);

            let (ref_train, mut ref_test) = gen_reference(&cfg.gen)?;
            ref_test.tag = "ref".into();
            let subsample_seed = config.derive_seed("k_shot", 0);
            let ref_train = match cfg.k_shot {
                Some(k) => subsample_per_class(&ref_train, k, subsample_seed)?,
                None => ref_train,
            };
            let shifts = cfg
                .shifts
                .iter()
                .map(|s| {
                    let styled = match s.style {
                        Some(j) => apply_shift(&ref_test, &cfg.gen.style(j))?,
                        None => ref_test.clone(),
                    };
                    let mut d = apply_shift(&styled, &s.spec)?;
                    d.tag = s.name.clone();
                    Ok(d)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Self {
                init_seed: config.derive_seed("model.init", 0),
                subsample_seed,
                random_interp_seed: config.derive_seed("random_interp", 0),
                cka_seed: config.derive_seed("cka", 0),
                pretrain: gen_pretrain_mixture(&cfg.gen)?,
                heldout: gen_pretrain_heldout(&cfg.gen)?,
                config: cfg,
                ref_train,
                ref_test,
                shifts,
            })
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.config.model
    }

    pub fn shift_names(&self) -> Vec<String> {
        self.config.shifts.iter().map(|s| s.name.clone()).collect()
    }

    /// Reference test set followed by every shifted test set.
    pub fn eval_sets(&self) -> Vec<&Dataset> {
        std::iter::once(&self.ref_test).chain(&self.shifts).collect()
    }
}

/// Accuracy of `c` on `data`.
pub fn evaluate(spec: &ModelSpec, c: &Checkpoint, data: &Dataset) -> Result<EvalResult> {
    let net = Network::new(spec, c)?;
    let preds = net.logits_batch(data)?.iter().map(|l| predict(l)).collect::<Vec<_>>();
    accuracy_eval(&data.tag, &preds, data.labels())
}

fn preds_of(logits: &[Vec<f64>]) -> Vec<usize> {
    logits.iter().map(|l| predict(l)).collect()
}

/// Reference and shift accuracies of one set of per-dataset logits.
fn row_from_logits(exp: &Experiment, alpha: f64, per_set: &[Vec<Vec<f64>>]) -> Result<SweepRow> {
    let mut evals = exp
        .eval_sets()
        .iter()
        .zip(per_set)
        .map(|(d, l)| accuracy_eval(&d.tag, &preds_of(l), d.labels()))
        .collect::<Result<Vec<_>>>()?;
    let reference = evals.remove(0);
    Ok(SweepRow::new(alpha, reference, evals))
}

/// Pre-trains end to end on the mixture, then replaces the head with the
/// normalized class means of held-out mixture embeddings. The result is the
/// zero-shot model.
pub fn pretrain_stage(exp: &Experiment) -> Result<Checkpoint> {
    stage("pretrain", || {
        let spec = exp.spec();
        let init = spec.init(exp.init_seed)?;
        let (trained, _) = finetune_with_hook(spec, &init, &exp.pretrain, &exp.config.pretrain, None, |_, _| Ok(()))?;
        let mut theta0 = zero_shot_head_from(spec, &trained, &exp.heldout)?;
        theta0.meta = CheckpointMeta {
            seed: exp.config.pretrain.seed,
            step: trained.meta.step,
            tag: "zero_shot".into(),
        };
        Ok(theta0)
    })
}

/// The zero-shot construction with the mixture replaced by the reference
/// training set: same initialization and pre-training schedule, prototypes
/// from the reference training set.
pub fn reference_only_zero_shot(exp: &Experiment) -> Result<Checkpoint> {
    let spec = exp.spec();
    let init = spec.init(exp.init_seed)?;
    let (trained, _) = finetune_with_hook(spec, &init, &exp.ref_train, &exp.config.pretrain, None, |_, _| Ok(()))?;
    zero_shot_head_from(spec, &trained, &exp.ref_train)
}

/// `c` with its head rebuilt from the class prototypes of `data`.
pub fn zero_shot_head_from(spec: &ModelSpec, c: &Checkpoint, data: &Dataset) -> Result<Checkpoint> {
    let net = Network::new(spec, c)?;
    let head = build_zero_shot_head(&class_prototypes(&net, data)?)?;
    with_head(c, &head)
}

/// Final weights of one EMA run.
#[derive(Debug, Clone)]
pub struct EmaOutcome {
    pub decay: f64,
    pub variant: EmaVariant,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub theta1: Checkpoint,
    pub trace: TrainTrace,
    pub ema: Vec<EmaOutcome>,
}

/// Fine-tunes from the zero-shot model on the reference training set
/// (k-shot subsampled when configured), tracking every configured EMA.
pub fn finetune_stage(exp: &Experiment, theta0: &Checkpoint) -> Result<FinetuneOutcome> {
    stage("finetune", || {
        let track_ema = exp.config.baselines_to_run.contains(&Baseline::Ema);
        let mut states = Vec::new();
        if track_ema {
            if let Some(ema) = &exp.config.ema {
                for &decay in &ema.decays {
                    for variant in [EmaVariant::ZeroInitDebiased, EmaVariant::InitBiased] {
                        states.push(EmaState::new(variant, theta0, decay)?);
                    }
                }
            }
        }
        let (theta1, trace) = finetune_with_hook(
            exp.spec(),
            theta0,
            &exp.ref_train,
            &exp.config.finetune,
            Some(theta0),
            |_, c| states.iter_mut().try_for_each(|s| s.update(c)),
        )?;
        let ema = states
            .iter()
            .map(|s| {
                Ok(EmaOutcome {
                    decay: s.decay(),
                    variant: s.variant(),
                    checkpoint: ema_final(s)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FinetuneOutcome { theta1, trace, ema })
    })
}

/// Weight-space ensembles `(1 - alpha) theta0 + alpha theta1` evaluated at
/// every grid point. Depends only on the data and the two checkpoints.
pub fn sweep_stage(exp: &Experiment, theta0: &Checkpoint, theta1: &Checkpoint) -> Result<AlphaSweep> {
    stage("sweep", || {
        let spec = exp.spec();
        let rows = exp
            .config
            .alpha_grid
            .par_iter()
            .map(|&alpha| {
                let mixed = interpolate(theta0, theta1, alpha)?;
                let net = Network::new(spec, &mixed)?;
                let logits = exp.eval_sets().iter().map(|d| net.logits_batch(d)).collect::<Result<Vec<_>>>()?;
                row_from_logits(exp, alpha, &logits)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AlphaSweep {
            shift_names: exp.shift_names(),
            rows,
        })
    })
}

/// Zero-shot versus fine-tuned diversity on every evaluation set. CKAC is
/// computed on the logits, since a linear-head run leaves the embeddings
/// identical.
pub fn diversity_stage(exp: &Experiment, theta0: &Checkpoint, theta1: &Checkpoint) -> Result<Vec<DiversityReport>> {
    stage("diversity", || {
        let spec = exp.spec();
        let mixed = interpolate(theta0, theta1, exp.config.diversity_alpha)?;
        let (n0, n1, ne) = (Network::new(spec, theta0)?, Network::new(spec, theta1)?, Network::new(spec, &mixed)?);
        exp.eval_sets()
            .par_iter()
            .map(|d| {
                let (l0, l1, le) = (n0.logits_batch(d)?, n1.logits_batch(d)?, ne.logits_batch(d)?);
                let (p0, p1, pe) = (preds_of(&l0), preds_of(&l1), preds_of(&le));
                let undefined_to_none = |r: Result<f64>| match r {
                    Ok(v) => Ok(Some(v)),
                    Err(Error::Undefined(m)) => {
                        warn!("{}: {m}", d.tag);
                        Ok(None)
                    }
                    Err(e) => Err(e),
                };
                let over = override_analysis(&p0, &p1, &pe, exp.config.override_denominator)?;
                Ok(DiversityReport {
                    tag: d.tag.clone(),
                    pd: prediction_diversity(&p0, &p1, d.labels())?,
                    cc: undefined_to_none(cohens_kappa_complement(&p0, &p1, spec.k))?,
                    kl_mean: mean_kl(&l0, &l1)?,
                    ckac: undefined_to_none(ckac_subsampled(&l0, &l1, CKA_ROW_CAP, exp.cka_seed))?,
                    margin_zero_shot: margin_stats(&l0)?,
                    margin_finetuned: margin_stats(&l1)?,
                    frac_overrides: over.overrides,
                    frac_overridden: over.overridden,
                    frac_neither: over.neither,
                })
            })
            .collect()
    })
}

/// Accuracies of one reference-only model used as a baseline fit point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitModelResult {
    pub label: String,
    pub epochs: usize,
    pub reference: f64,
    pub shifts: Vec<f64>,
    pub avg_shifts: f64,
}

/// Baseline fit for one target (a shift or the shift average) and the
/// effective robustness of every sweep point against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRobustness {
    pub target: String,
    pub fit: RobustnessFit,
    /// `(alpha, rho)` per grid point.
    pub rho: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub fit_models: Vec<FitModelResult>,
    pub targets: Vec<TargetRobustness>,
    pub observation_reference: ObservationCheck,
    pub observation_avg_shifts: ObservationCheck,
}

/// Trains the reference-only models used as fit points: one per entry of
/// `fit_models.epochs`, each from its own initialization.
pub fn fit_models_stage(exp: &Experiment) -> Result<Vec<FitModelResult>> {
    stage("fit_models", || {
        let spec = exp.spec();
        let fm = &exp.config.fit_models;
        fm.epochs
            .par_iter()
            .enumerate()
            .map(|(i, &epochs)| {
                let cfg = TrainConfig {
                    epochs,
                    seed: fm.train.seed.wrapping_add(i as u64),
                    ..fm.train.clone()
                };
                let init = spec.init(exp.init_seed.wrapping_add(1 + i as u64))?;
                let (c, _) = finetune_with_hook(spec, &init, &exp.ref_train, &cfg, None, |_, _| Ok(()))?;
                let net = Network::new(spec, &c)?;
                let acc = |d: &Dataset| -> Result<f64> {
                    Ok(accuracy_eval(&d.tag, &preds_of(&net.logits_batch(d)?), d.labels())?.accuracy)
                };
                let reference = acc(&exp.ref_test)?;
                let shifts = exp.shifts.iter().map(acc).collect::<Result<Vec<_>>>()?;
                let (avg_shifts, _) = averages(reference, &shifts);
                Ok(FitModelResult {
                    label: format!("reference-only #{i} ({epochs} epochs)"),
                    epochs,
                    reference,
                    shifts,
                    avg_shifts,
                })
            })
            .collect()
    })
}

fn clamp(acc: f64, n: usize, what: &str) -> f64 {
    let (v, clamped) = clamp_accuracy(acc, n);
    if clamped {
        warn!("{what}: accuracy {acc} clamped to {v} before logit");
    }
    v
}

/// Baseline fits per shift and on the shift average, effective robustness
/// along the sweep, and the interpolation-curve checks.
pub fn robustness_stage(exp: &Experiment, sweep: &AlphaSweep, fit_models: &[FitModelResult]) -> Result<RobustnessReport> {
    stage("robustness", || {
        let n = exp.ref_test.len();
        let mut targets = Vec::new();
        let names = exp.shift_names();
        for t in 0..=names.len() {
            let avg = t == names.len();
            let target = if avg { "avg_shifts".to_string() } else { names[t].clone() };
            let pick_fit = |m: &FitModelResult| if avg { m.avg_shifts } else { m.shifts[t] };
            let points: Vec<(f64, f64)> = fit_models
                .iter()
                .map(|m| (clamp(m.reference, n, &m.label), clamp(pick_fit(m), n, &m.label)))
                .collect();
            let fit = fit_baseline(&points)?;
            let rho = sweep
                .rows
                .iter()
                .map(|r| {
                    let y = if avg { r.avg_shifts } else { r.shifts[t].accuracy };
                    let x = clamp(r.reference.accuracy, n, "sweep");
                    Ok((r.alpha, effective_robustness(&fit, x, y)?))
                })
                .collect::<Result<Vec<_>>>()?;
            targets.push(TargetRobustness { target, fit, rho });
        }
        let (first, last) = match (sweep.rows.first(), sweep.rows.last()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Data("empty sweep".into())),
        };
        Ok(RobustnessReport {
            fit_models: fit_models.to_vec(),
            targets,
            observation_reference: observation1_check(
                &sweep.reference_curve(),
                first.reference.accuracy,
                last.reference.accuracy,
            )?,
            observation_avg_shifts: observation1_check(&sweep.avg_shifts_curve(), first.avg_shifts, last.avg_shifts)?,
        })
    })
}

/// Accuracy summary of one comparison method at one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub method: String,
    /// Hyperparameter value, when the method has one.
    pub param: Option<f64>,
    pub alpha: Option<f64>,
    pub reference: f64,
    pub shifts: Vec<f64>,
    pub avg_shifts: f64,
    pub avg_ref_shifts: f64,
}

impl BaselineResult {
    fn from_row(method: &str, param: Option<f64>, alpha: Option<f64>, row: &SweepRow) -> Self {
        Self {
            method: method.into(),
            param,
            alpha,
            reference: row.reference.accuracy,
            shifts: row.shifts.iter().map(|e| e.accuracy).collect(),
            avg_shifts: row.avg_shifts,
            avg_ref_shifts: row.avg_ref_shifts,
        }
    }
}

fn eval_row(exp: &Experiment, c: &Checkpoint) -> Result<SweepRow> {
    let net = Network::new(exp.spec(), c)?;
    let logits = exp.eval_sets().iter().map(|d| net.logits_batch(d)).collect::<Result<Vec<_>>>()?;
    row_from_logits(exp, f64::NAN, &logits)
}

/// Every configured comparison method, plus a zero-shot head built from
/// reference-only prototypes.
pub fn baselines_stage(
    exp: &Experiment,
    theta0: &Checkpoint,
    theta1: &Checkpoint,
    ema: &[EmaOutcome],
) -> Result<Vec<BaselineResult>> {
    stage("baselines", || {
        let spec = exp.spec();
        let cfg = &exp.config;
        let grid = &cfg.baseline_grid;
        let mut out = Vec::new();

        let ref_head = zero_shot_head_from(spec, theta0, &exp.ref_train)?;
        out.push(BaselineResult::from_row("reference_prototype_head", None, None, &eval_row(exp, &ref_head)?));
        let ref_only = reference_only_zero_shot(exp)?;
        out.push(BaselineResult::from_row("reference_only_pipeline", None, None, &eval_row(exp, &ref_only)?));

        let mut runs: Vec<(&str, f64, TrainConfig)> = Vec::new();
        for b in &cfg.baselines_to_run {
            let base = cfg.finetune.clone();
            match b {
                Baseline::Distill => {
                    runs.extend(grid.distill_alpha.iter().map(|&v| ("distill", v, TrainConfig { distill_alpha: v, ..base.clone() })))
                }
                Baseline::RegToInit => {
                    runs.extend(grid.reg_to_init.iter().map(|&v| ("reg_to_init", v, TrainConfig { reg_to_init: v, ..base.clone() })))
                }
                Baseline::LabelSmoothing => runs.extend(
                    grid.label_smoothing
                        .iter()
                        .map(|&v| ("label_smoothing", v, TrainConfig { label_smoothing: v, ..base.clone() })),
                ),
                Baseline::L1 => runs.extend(grid.l1.iter().map(|&v| ("l1", v, TrainConfig { l1: v, ..base.clone() }))),
                Baseline::Wd => {
                    runs.extend(grid.weight_decay.iter().map(|&v| ("wd", v, TrainConfig { weight_decay: v, ..base.clone() })))
                }
                _ => {}
            }
        }
        let trained = runs
            .par_iter()
            .map(|(method, v, tc)| {
                let (c, _) = finetune_with_hook(spec, theta0, &exp.ref_train, tc, Some(theta0), |_, _| Ok(()))?;
                Ok(BaselineResult::from_row(method, Some(*v), None, &eval_row(exp, &c)?))
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(trained);

        let need_logits = cfg
            .baselines_to_run
            .iter()
            .any(|b| matches!(b, Baseline::OseLogits | Baseline::OseSoftmax));
        let (l0, l1) = if need_logits {
            let (n0, n1) = (Network::new(spec, theta0)?, Network::new(spec, theta1)?);
            let l0 = exp.eval_sets().iter().map(|d| n0.logits_batch(d)).collect::<Result<Vec<_>>>()?;
            let l1 = exp.eval_sets().iter().map(|d| n1.logits_batch(d)).collect::<Result<Vec<_>>>()?;
            (l0, l1)
        } else {
            (Vec::new(), Vec::new())
        };
        let mix_sets = |f: fn(&[f64], &[f64], f64) -> Vec<f64>, alpha: f64| -> Vec<Vec<Vec<f64>>> {
            l0.iter()
                .zip(&l1)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(x, y, alpha)).collect())
                .collect()
        };
        for b in &cfg.baselines_to_run {
            for &alpha in &cfg.alpha_grid {
                let row = match b {
                    Baseline::OseLogits => row_from_logits(exp, alpha, &mix_sets(mix_logits, alpha))?,
                    Baseline::OseSoftmax => row_from_logits(exp, alpha, &mix_sets(mix_softmax, alpha))?,
                    Baseline::RandomInterp => {
                        let logits = exp
                            .eval_sets()
                            .iter()
                            .map(|d| random_interp_predict(spec, theta0, theta1, alpha, d, exp.random_interp_seed))
                            .collect::<Result<Vec<_>>>()?;
                        row_from_logits(exp, alpha, &logits)?
                    }
                    _ => break,
                };
                let name = match b {
                    Baseline::OseLogits => "ose_logits",
                    Baseline::OseSoftmax => "ose_softmax",
                    _ => "random_interp",
                };
                out.push(BaselineResult::from_row(name, None, Some(alpha), &row));
            }
        }
        if cfg.baselines_to_run.contains(&Baseline::Ema) {
            for e in ema {
                let name = match e.variant {
                    EmaVariant::ZeroInitDebiased => "ema_zero_init",
                    EmaVariant::InitBiased => "ema_init_biased",
                };
                out.push(BaselineResult::from_row(name, Some(e.decay), None, &eval_row(exp, &e.checkpoint)?));
            }
        }
        Ok(out)
    })
}

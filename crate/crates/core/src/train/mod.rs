//! Fine-tuning: losses, AdamW with warmup + cosine schedule, gradient
//! clipping, end-to-end and linear-head modes, and a finite-difference
//! gradient checker.

mod gradcheck;
mod loss;
mod optim;

pub use gradcheck::{grad_check, GRAD_CHECK_STEP};
pub use loss::{
    cross_entropy, is_encoder_param, log_softmax, loss_ce_smoothed, loss_distill, penalty_reg_to_init,
    smoothed_target, softmax, PenaltyScope,
};
pub use optim::{adamw_step, clip_global_norm, lr_at, AdamMoments, AdamWParams};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Network, HEAD};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    End2end,
    LinearHead,
}

/// Full optimization recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub warmup_steps: usize,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub l1: f64,
    #[serde(default)]
    pub label_smoothing: f64,
    #[serde(default)]
    pub reg_to_init: f64,
    #[serde(default)]
    pub distill_alpha: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    /// Record a checkpoint every this many optimizer steps.
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::LinearHead,
            epochs: 10,
            batch_size: 64,
            lr_max: 3e-3,
            warmup_steps: 20,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.1,
            l1: 0.0,
            label_smoothing: 0.0,
            reg_to_init: 0.0,
            distill_alpha: 0.0,
            grad_clip_norm: Some(1.0),
            seed: 0,
            snapshot_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return bad(format!("lr_max {} must be positive", self.lr_max));
        }
        let (b1, b2) = self.betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return bad(format!("betas ({b1}, {b2}) must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps must be positive".into());
        }
        if !(0.0..=0.25).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 0.25]", self.label_smoothing));
        }
        if !(0.0..=1.0).contains(&self.distill_alpha) {
            return bad(format!("distill_alpha {} outside [0, 1]", self.distill_alpha));
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("l1", self.l1),
            ("reg_to_init", self.reg_to_init),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be non-negative"));
            }
        }
        if let Some(c) = self.grad_clip_norm {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("grad_clip_norm {c} must be positive"));
            }
        }
        if self.snapshot_every == Some(0) {
            return bad("snapshot_every must be positive".into());
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    pub snapshots: Vec<(usize, Checkpoint)>,
}

impl TrainTrace {
    /// `step,loss,lr,grad_norm`, shortest round-trip reals.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "loss", "lr", "grad_norm"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.loss.to_string(),
                r.lr.to_string(),
                r.grad_norm.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Index range of the parameters the optimizer may touch.
pub(crate) fn trainable_range(c: &Checkpoint, mode: TrainMode) -> std::ops::Range<usize> {
    match mode {
        TrainMode::End2end => 0..c.values().len(),
        TrainMode::LinearHead => c.layout().get(HEAD).expect("head present").range(),
    }
}

/// Batch of training rows with their optional teacher logits.
pub struct Batch<'a> {
    pub rows: Vec<&'a [f64]>,
    pub labels: Vec<usize>,
    pub teacher: Option<Vec<&'a [f64]>>,
}

impl<'a> Batch<'a> {
    pub fn from_dataset(data: &'a Dataset, teacher_logits: Option<&'a [Vec<f64>]>) -> Self {
        let idx: Vec<usize> = (0..data.len()).collect();
        Self::select(data, teacher_logits, &idx)
    }

    fn select(data: &'a Dataset, teacher_logits: Option<&'a [Vec<f64>]>, idx: &[usize]) -> Self {
        Self {
            rows: idx.iter().map(|&i| data.row(i)).collect(),
            labels: idx.iter().map(|&i| data.labels()[i]).collect(),
            teacher: teacher_logits.map(|t| idx.iter().map(|&i| t[i].as_slice()).collect()),
        }
    }
}

/// Gradient of the per-sample loss with respect to the logits, together with
/// the loss value.
fn logit_loss_grad(logits: &[f64], label: usize, teacher: Option<&[f64]>, cfg: &TrainConfig) -> (f64, Vec<f64>) {
    let k = logits.len();
    let logp = log_softmax(logits);
    let p: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
    let target = smoothed_target(k, label, cfg.label_smoothing);
    let a = cfg.distill_alpha;
    let ce: f64 = -target.iter().zip(&logp).map(|(t, l)| if *t == 0.0 { 0.0 } else { t * l }).sum::<f64>();
    let mut loss = (1.0 - a) * ce;
    let mut grad: Vec<f64> = p.iter().zip(&target).map(|(p, t)| (1.0 - a) * (p - t)).collect();
    if a > 0.0 {
        let q = softmax(teacher.expect("teacher logits present when distill_alpha > 0"));
        loss += a * -q.iter().zip(&logp).map(|(q, l)| q * l).sum::<f64>();
        for j in 0..k {
            grad[j] += a * (p[j] - q[j]);
        }
    }
    (loss, grad)
}

/// Mean batch loss plus penalties, and its gradient over the whole layout
/// (entries outside the trainable range are zero).
pub fn objective_and_grad(
    spec: &ModelSpec,
    c: &Checkpoint,
    anchor: &Checkpoint,
    batch: &Batch<'_>,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let net = Network::new(spec, c)?;
    let n = batch.rows.len();
    if n == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let head_only = cfg.mode == TrainMode::LinearHead;
    let mut grad = vec![0.0; c.values().len()];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, x) in batch.rows.iter().enumerate() {
        let t = net.trace(x)?;
        let teacher = batch.teacher.as_ref().map(|t| t[i]);
        let (l, mut dl) = logit_loss_grad(&t.logits, batch.labels[i], teacher, cfg);
        loss += l * inv_n;
        dl.iter_mut().for_each(|g| *g *= inv_n);
        net.backward(c.layout(), &t, &dl, &mut grad, head_only);
    }
    let range = trainable_range(c, cfg.mode);
    add_penalties(c.values(), anchor.values(), range, cfg, &mut loss, &mut grad);
    Ok((loss, grad))
}

fn add_penalties(
    values: &[f64],
    anchor: &[f64],
    range: std::ops::Range<usize>,
    cfg: &TrainConfig,
    loss: &mut f64,
    grad: &mut [f64],
) {
    for i in range {
        let v = values[i];
        if cfg.reg_to_init > 0.0 {
            let d = v - anchor[i];
            *loss += cfg.reg_to_init * d * d;
            grad[i] += 2.0 * cfg.reg_to_init * d;
        }
        if cfg.l1 > 0.0 {
            *loss += cfg.l1 * v.abs();
            grad[i] += cfg.l1 * if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
        }
    }
}

/// Linear-head objective on cached embeddings; same value and head gradient
/// as [`objective_and_grad`] in `LinearHead` mode.
fn head_objective_and_grad(
    c: &Checkpoint,
    anchor: &Checkpoint,
    k: usize,
    embeddings: &[&[f64]],
    labels: &[usize],
    teacher: Option<&[&[f64]]>,
    cfg: &TrainConfig,
) -> (f64, Vec<f64>) {
    let range = trainable_range(c, TrainMode::LinearHead);
    let head = &c.values()[range.clone()];
    let mut grad = vec![0.0; c.values().len()];
    let mut loss = 0.0;
    let inv_n = 1.0 / embeddings.len() as f64;
    for (i, e) in embeddings.iter().enumerate() {
        let mut logits = vec![0.0; k];
        for (r, ei) in e.iter().enumerate() {
            for j in 0..k {
                logits[j] += ei * head[r * k + j];
            }
        }
        let (l, dl) = logit_loss_grad(&logits, labels[i], teacher.map(|t| t[i]), cfg);
        loss += l * inv_n;
        let g = &mut grad[range.clone()];
        for (r, ei) in e.iter().enumerate() {
            for j in 0..k {
                g[r * k + j] += ei * dl[j] * inv_n;
            }
        }
    }
    add_penalties(c.values(), anchor.values(), range, cfg, &mut loss, &mut grad);
    (loss, grad)
}

/// Fine-tunes `theta_init` on `train`. See [`finetune_with_hook`].
pub fn finetune(
    spec: &ModelSpec,
    theta_init: &Checkpoint,
    train: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<&Checkpoint>,
) -> Result<(Checkpoint, TrainTrace)> {
    finetune_with_hook(spec, theta_init, train, cfg, teacher, |_, _| Ok(()))
}

/// Minimizes the configured objective with AdamW. `on_step` receives the
/// 1-based step number and the parameters after every optimizer step.
///
/// The regularize-to-init anchor is `theta_init`. In `LinearHead` mode only
/// the head is updated; encoder values are copied through untouched.
pub fn finetune_with_hook(
    spec: &ModelSpec,
    theta_init: &Checkpoint,
    train: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<&Checkpoint>,
    mut on_step: impl FnMut(usize, &Checkpoint) -> Result<()>,
) -> Result<(Checkpoint, TrainTrace)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let net0 = Network::new(spec, theta_init)?;
    if train.dim() != spec.d_in() {
        return Err(Error::Structural(format!(
            "training data has {} features, model expects {}",
            train.dim(),
            spec.d_in()
        )));
    }
    let teacher_logits = match (cfg.distill_alpha > 0.0, teacher) {
        (true, Some(t)) => Some(Network::new(spec, t)?.logits_batch(train)?),
        (true, None) => return Err(Error::Config("distill_alpha > 0 requires a teacher".into())),
        (false, _) => None,
    };
    let embeddings = match cfg.mode {
        TrainMode::LinearHead => Some(net0.features_batch(train)?),
        TrainMode::End2end => None,
    };

    let range = trainable_range(theta_init, cfg.mode);
    let steps_per_epoch = cfg.steps_per_epoch(train.len());
    let total = cfg.epochs * steps_per_epoch;
    let mut current = theta_init.clone();
    let mut moments = AdamMoments::zeros(range.len());
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        Rng::stream(cfg.seed, "train.shuffle", epoch as u64).shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, mut grad) = match &embeddings {
                Some(emb) => {
                    let e: Vec<&[f64]> = chunk.iter().map(|&i| emb[i].as_slice()).collect();
                    let labels: Vec<usize> = chunk.iter().map(|&i| train.labels()[i]).collect();
                    let t: Option<Vec<&[f64]>> = teacher_logits
                        .as_ref()
                        .map(|tl| chunk.iter().map(|&i| tl[i].as_slice()).collect());
                    head_objective_and_grad(&current, theta_init, spec.k, &e, &labels, t.as_deref(), cfg)
                }
                None => {
                    let batch = Batch::select(train, teacher_logits.as_deref(), chunk);
                    objective_and_grad(spec, &current, theta_init, &batch, cfg)?
                }
            };
            if !loss.is_finite() {
                return Err(Error::NumericAbort {
                    step,
                    what: format!("loss is {loss}"),
                });
            }
            let g = &mut grad[range.clone()];
            let grad_norm = match cfg.grad_clip_norm {
                Some(max) => clip_global_norm(g, max),
                None => g.iter().map(|v| v * v).sum::<f64>().sqrt(),
            };
            let lr = lr_at(step, total, cfg.warmup_steps, cfg.lr_max);
            let hyper = AdamWParams {
                lr,
                beta1: cfg.betas.0,
                beta2: cfg.betas.1,
                eps: cfg.eps,
                weight_decay: cfg.weight_decay,
            };
            adamw_step(&mut current.values_mut()[range.clone()], g, &mut moments, step as u64 + 1, hyper)
                .map_err(|e| Error::NumericAbort {
                    step,
                    what: e.to_string(),
                })?;
            if current.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericAbort {
                    step,
                    what: "parameters became non-finite".into(),
                });
            }
            trace.rows.push(TraceRow {
                step,
                loss,
                lr,
                grad_norm,
            });
            step += 1;
            current.meta.step = step as u64;
            if let Some(every) = cfg.snapshot_every {
                if step % every == 0 {
                    trace.snapshots.push((step, current.clone()));
                }
            }
            on_step(step, &current)?;
        }
    }
    current.meta = CheckpointMeta {
        seed: cfg.seed,
        step: step as u64,
        tag: format!(
            "finetune({})",
            match cfg.mode {
                TrainMode::End2end => "end2end",
                TrainMode::LinearHead => "linear_head",
            }
        ),
    };
    Ok((current, trace))
}

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{ENC_PREFIX, HEAD};

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite {what}")));
    }
    Ok(())
}

/// Smoothed one-hot target: `1 - eps` on `label`, `eps / (k - 1)` elsewhere.
pub fn smoothed_target(k: usize, label: usize, eps: f64) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let off = eps / (k - 1) as f64;
    let mut t = vec![off; k];
    t[label] = 1.0 - eps;
    t
}

/// Cross-entropy of `logits` against an arbitrary target distribution.
pub fn cross_entropy(logits: &[f64], target: &[f64]) -> f64 {
    log_softmax(logits)
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(lp, t)| -t * lp)
        .sum()
}

pub fn loss_ce_smoothed(logits: &[f64], label: usize, eps: f64) -> Result<f64> {
    check_finite(logits, "logits")?;
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Domain(format!("label smoothing {eps} outside [0, 1)")));
    }
    if label >= logits.len() {
        return Err(Error::Domain(format!("label {label} outside {} classes", logits.len())));
    }
    Ok(cross_entropy(logits, &smoothed_target(logits.len(), label, eps)))
}

/// `(1 - a) * CE(student, label) + a * CE(student, softmax(teacher))`.
pub fn loss_distill(student: &[f64], teacher: &[f64], label: usize, alpha: f64) -> Result<f64> {
    check_finite(student, "student logits")?;
    check_finite(teacher, "teacher logits")?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("distill alpha {alpha} outside [0, 1]")));
    }
    if student.len() != teacher.len() {
        return Err(Error::Structural("student and teacher class counts differ".into()));
    }
    let hard = loss_ce_smoothed(student, label, 0.0)?;
    let soft = cross_entropy(student, &softmax(teacher));
    Ok((1.0 - alpha) * hard + alpha * soft)
}

/// Which parameters a penalty looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyScope {
    All,
    HeadOnly,
}

/// `lambda * ||c - c0||^2` over the scoped parameters.
pub fn penalty_reg_to_init(c: &Checkpoint, c0: &Checkpoint, lambda: f64, scope: PenaltyScope) -> Result<f64> {
    match scope {
        PenaltyScope::All => {
            c.ensure_same_layout(c0)?;
            Ok(lambda * c.values().iter().zip(c0.values()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        }
        PenaltyScope::HeadOnly => {
            c.ensure_same_layout(c0)?;
            let (a, b) = (c.param(HEAD), c0.param(HEAD));
            let (a, b) = a.zip(b).ok_or_else(|| Error::Structural("no head parameters".into()))?;
            Ok(lambda * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        }
    }
}

/// Whether a parameter name belongs to the encoder.
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with(ENC_PREFIX)
}

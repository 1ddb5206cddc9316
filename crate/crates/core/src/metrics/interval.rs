use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accuracy on one dataset with its 95% Clopper–Pearson interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub tag: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn accuracy_eval(tag: &str, predictions: &[usize], labels: &[usize]) -> Result<EvalResult> {
    if predictions.len() != labels.len() {
        return Err(Error::Structural("predictions and labels differ in length".into()));
    }
    let n = labels.len();
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    let (ci_low, ci_high) = clopper_pearson(correct, n, 0.95)?;
    Ok(EvalResult {
        tag: tag.to_string(),
        n,
        correct,
        accuracy: correct as f64 / n as f64,
        ci_low,
        ci_high,
    })
}

struct LogBinomial {
    /// `ln(i!)` for `i = 0..=n`.
    ln_fact: Vec<f64>,
    n: usize,
}

impl LogBinomial {
    fn new(n: usize) -> Self {
        let mut ln_fact = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        ln_fact.push(0.0);
        for i in 1..=n {
            acc += (i as f64).ln();
            ln_fact.push(acc);
        }
        Self { ln_fact, n }
    }

    fn ln_pmf(&self, k: usize, p: f64) -> f64 {
        let n = self.n;
        let ln_choose = self.ln_fact[n] - self.ln_fact[k] - self.ln_fact[n - k];
        let a = if k == 0 { 0.0 } else { k as f64 * p.ln() };
        let b = if k == n { 0.0 } else { (n - k) as f64 * (-p).ln_1p() };
        ln_choose + a + b
    }

    /// `P(lo <= X <= hi)` via log-sum-exp.
    fn range_prob(&self, lo: usize, hi: usize, p: f64) -> f64 {
        let terms: Vec<f64> = (lo..=hi).map(|k| self.ln_pmf(k, p)).collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return 0.0;
        }
        (max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()).exp()
    }
}

/// Solves `f(p) = target` for monotone `f` on `[0, 1]` by bisection.
fn bisect(mut f: impl FnMut(f64) -> f64, target: f64, increasing: bool) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let above = f(mid) > target;
        if above == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact binomial interval for `correct` successes in `n` trials.
///
/// The lower bound solves `P(X >= correct) = (1 - confidence) / 2` and is 0
/// when `correct = 0`; the upper bound solves `P(X <= correct) = (1 -
/// confidence) / 2` and is 1 when `correct = n`.
pub fn clopper_pearson(correct: usize, n: usize, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 || correct > n {
        return Err(Error::Domain(format!("invalid counts: {correct} of {n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!("confidence {confidence} outside (0, 1)")));
    }
    let tail = (1.0 - confidence) / 2.0;
    let b = LogBinomial::new(n);
    let low = if correct == 0 {
        0.0
    } else {
        bisect(|p| b.range_prob(correct, n, p), tail, true)
    };
    let high = if correct == n {
        1.0
    } else {
        bisect(|p| b.range_prob(0, correct, p), tail, false)
    };
    Ok((low, high))
}

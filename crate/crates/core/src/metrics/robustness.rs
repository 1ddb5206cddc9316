use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("logit needs p in (0, 1), got {p}")));
    }
    Ok((p / (1.0 - p)).ln())
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Clamps an accuracy measured on `n` samples into `[1/(2n), 1 - 1/(2n)]`.
/// The flag reports whether clamping happened.
pub fn clamp_accuracy(acc: f64, n: usize) -> (f64, bool) {
    let eps = 0.5 / n.max(1) as f64;
    if acc < eps {
        (eps, true)
    } else if acc > 1.0 - eps {
        (1.0 - eps, true)
    } else {
        (acc, false)
    }
}

/// Least-squares line through `(logit(acc_ref), logit(acc_shift))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<(f64, f64)>,
    /// `logit(acc_shift) - (slope * logit(acc_ref) + intercept)` per point.
    pub residuals: Vec<f64>,
}

impl RobustnessFit {
    /// Predicted shifted accuracy for a reference accuracy.
    pub fn baseline(&self, acc_ref: f64) -> Result<f64> {
        Ok(sigmoid(self.slope * logit(acc_ref)? + self.intercept))
    }
}

pub fn fit_baseline(points: &[(f64, f64)]) -> Result<RobustnessFit> {
    if points.len() < 2 {
        return Err(Error::Fit("need at least two points".into()));
    }
    let clamp_hint = |p: f64| {
        Error::Domain(format!(
            "accuracy {p} is not in (0, 1); clamp to [1/(2n), 1 - 1/(2n)] before fitting"
        ))
    };
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(r, s) in points {
        xs.push(logit(r).map_err(|_| clamp_hint(r))?);
        ys.push(logit(s).map_err(|_| clamp_hint(s))?);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("all reference accuracies are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = xs.iter().zip(&ys).map(|(x, y)| y - (slope * x + intercept)).collect();
    Ok(RobustnessFit {
        slope,
        intercept,
        points: points.to_vec(),
        residuals,
    })
}

/// `acc_shift - baseline(acc_ref)`, in accuracy units.
pub fn effective_robustness(fit: &RobustnessFit, acc_ref: f64, acc_shift: f64) -> Result<f64> {
    Ok(acc_shift - fit.baseline(acc_ref)?)
}

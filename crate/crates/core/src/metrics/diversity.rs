use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::margin;
use crate::rng::Rng;
use crate::train::log_softmax;

/// Row cap for CKA; larger inputs are subsampled with a seeded draw.
pub const CKA_ROW_CAP: usize = 10_000;

/// Diversity and confidence summary of a zero-shot / fine-tuned pair on one
/// dataset. `cc` and `ckac` are `None` where the statistic is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub tag: String,
    pub pd: f64,
    pub cc: Option<f64>,
    pub kl_mean: f64,
    pub ckac: Option<f64>,
    pub margin_zero_shot: f64,
    pub margin_finetuned: f64,
    pub frac_overrides: f64,
    pub frac_overridden: f64,
    pub frac_neither: f64,
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Structural(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Data("no samples".into()));
    }
    Ok(())
}

/// Fraction of samples where exactly one of the two classifiers is correct.
pub fn prediction_diversity(preds_f: &[usize], preds_g: &[usize], labels: &[usize]) -> Result<f64> {
    same_len(preds_f.len(), preds_g.len())?;
    same_len(preds_f.len(), labels.len())?;
    let hits = preds_f
        .iter()
        .zip(preds_g)
        .zip(labels)
        .filter(|((f, g), y)| (f == y) != (g == y))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `(1 - p_o) / (1 - p_e)`: chance-corrected disagreement.
pub fn cohens_kappa_complement(preds_f: &[usize], preds_g: &[usize], k: usize) -> Result<f64> {
    same_len(preds_f.len(), preds_g.len())?;
    let n = preds_f.len() as f64;
    let mut nf = vec![0usize; k];
    let mut ng = vec![0usize; k];
    let mut agree = 0usize;
    for (&f, &g) in preds_f.iter().zip(preds_g) {
        if f >= k || g >= k {
            return Err(Error::Domain(format!("prediction outside [0, {k})")));
        }
        nf[f] += 1;
        ng[g] += 1;
        agree += usize::from(f == g);
    }
    let p_o = agree as f64 / n;
    let p_e = nf.iter().zip(&ng).map(|(a, b)| (a * b) as f64).sum::<f64>() / (n * n);
    if p_e >= 1.0 {
        return Err(Error::Undefined(
            "expected agreement is 1 (both classifiers predict one constant class)".into(),
        ));
    }
    Ok((1.0 - p_o) / (1.0 - p_e))
}

/// Mean over samples of `KL(softmax(f) || softmax(g))`.
pub fn mean_kl(logits_f: &[Vec<f64>], logits_g: &[Vec<f64>]) -> Result<f64> {
    same_len(logits_f.len(), logits_g.len())?;
    let mut total = 0.0;
    for (lf, lg) in logits_f.iter().zip(logits_g) {
        if lf.len() != lg.len() {
            return Err(Error::Structural("class counts differ".into()));
        }
        let a = log_softmax(lf);
        let b = log_softmax(lg);
        total += a.iter().zip(&b).map(|(x, y)| x.exp() * (x - y)).sum::<f64>();
    }
    Ok(total / logits_f.len() as f64)
}

fn centered(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Structural("ragged feature matrix".into()));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect())
}

/// `||B^T A||_F^2` for row-major `A` (N x da) and `B` (N x db).
fn cross_gram_sq(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (da, db) = (a[0].len(), b[0].len());
    let mut m = vec![0.0; da * db];
    for (ra, rb) in a.iter().zip(b) {
        for (j, y) in rb.iter().enumerate() {
            let row = &mut m[j * da..(j + 1) * da];
            for (slot, x) in row.iter_mut().zip(ra) {
                *slot += y * x;
            }
        }
    }
    m.iter().map(|v| v * v).sum()
}

/// `1 - CKA` with `CKA = ||S_g^T S_f||_F^2 / (||S_f^T S_f||_F ||S_g^T S_g||_F)`
/// on column-centered features. All rows are used.
pub fn ckac(features_f: &[Vec<f64>], features_g: &[Vec<f64>]) -> Result<f64> {
    same_len(features_f.len(), features_g.len())?;
    if features_f.len() < 2 {
        return Err(Error::Data("CKA needs at least two samples".into()));
    }
    let sf = centered(features_f)?;
    let sg = centered(features_g)?;
    let ff = cross_gram_sq(&sf, &sf);
    let gg = cross_gram_sq(&sg, &sg);
    if ff == 0.0 || gg == 0.0 {
        return Err(Error::Undefined("centered features are all zero".into()));
    }
    let fg = cross_gram_sq(&sf, &sg);
    Ok(1.0 - fg / (ff * gg).sqrt())
}

/// [`ckac`] on at most `cap` rows, the same seeded subset for both inputs.
pub fn ckac_subsampled(features_f: &[Vec<f64>], features_g: &[Vec<f64>], cap: usize, seed: u64) -> Result<f64> {
    same_len(features_f.len(), features_g.len())?;
    if features_f.len() <= cap {
        return ckac(features_f, features_g);
    }
    let mut idx: Vec<usize> = (0..features_f.len()).collect();
    Rng::stream(seed, "metrics.ckac", 0).shuffle(&mut idx);
    idx.truncate(cap);
    idx.sort_unstable();
    let f: Vec<Vec<f64>> = idx.iter().map(|&i| features_f[i].clone()).collect();
    let g: Vec<Vec<f64>> = idx.iter().map(|&i| features_g[i].clone()).collect();
    ckac(&f, &g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideDenominator {
    /// Divide by the total sample count.
    #[default]
    AllSamples,
    /// Divide by the number of samples where the two models disagree.
    Disagreements,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverrideFractions {
    /// Models disagree and the ensemble sides with the zero-shot model.
    pub overrides: f64,
    /// Models disagree and the ensemble sides with the fine-tuned model.
    pub overridden: f64,
    /// Models disagree and the ensemble matches neither.
    pub neither: f64,
}

pub fn override_analysis(
    preds_zero: &[usize],
    preds_ft: &[usize],
    preds_ensemble: &[usize],
    denominator: OverrideDenominator,
) -> Result<OverrideFractions> {
    same_len(preds_zero.len(), preds_ft.len())?;
    same_len(preds_zero.len(), preds_ensemble.len())?;
    let (mut over, mut under, mut neither, mut disagree) = (0usize, 0usize, 0usize, 0usize);
    for ((z, f), e) in preds_zero.iter().zip(preds_ft).zip(preds_ensemble) {
        if z == f {
            continue;
        }
        disagree += 1;
        if e == z {
            over += 1;
        } else if e == f {
            under += 1;
        } else {
            neither += 1;
        }
    }
    let denom = match denominator {
        OverrideDenominator::AllSamples => preds_zero.len(),
        OverrideDenominator::Disagreements => disagree,
    };
    if denom == 0 {
        return Ok(OverrideFractions {
            overrides: 0.0,
            overridden: 0.0,
            neither: 0.0,
        });
    }
    let d = denom as f64;
    Ok(OverrideFractions {
        overrides: over as f64 / d,
        overridden: under as f64 / d,
        neither: neither as f64 / d,
    })
}

/// Mean top-1 minus top-2 score over rows.
pub fn margin_stats(logit_rows: &[Vec<f64>]) -> Result<f64> {
    if logit_rows.is_empty() {
        return Err(Error::Data("no rows".into()));
    }
    let mut total = 0.0;
    for r in logit_rows {
        total += margin(r)?;
    }
    Ok(total / logit_rows.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pd_cases() {
        let y = [0, 1, 2, 0];
        assert_eq!(prediction_diversity(&[0, 1, 1, 2], &[0, 1, 1, 2], &y).unwrap(), 0.0);
        assert_eq!(prediction_diversity(&y, &[1, 0, 0, 1], &y).unwrap(), 1.0);
        // indicators: f right/g right, f right/g wrong, f wrong/g right, both wrong -> 2/4
        assert_eq!(prediction_diversity(&[0, 1, 0, 1], &[0, 0, 2, 2], &y).unwrap(), 0.5);
        assert_eq!(
            prediction_diversity(&[0, 1, 0, 1], &[0, 0, 2, 2], &y).unwrap(),
            prediction_diversity(&[0, 0, 2, 2], &[0, 1, 0, 1], &y).unwrap()
        );
    }

    #[test]
    fn cc_cases() {
        assert_eq!(cohens_kappa_complement(&[0, 1, 1, 0], &[0, 1, 1, 0], 2).unwrap(), 0.0);
        // n_f = (3, 1), n_g = (2, 2), agreement on 1 of 4: p_o = 0.25, p_e = 0.5, kappa = -0.5
        let f = [0, 0, 0, 1];
        let g = [0, 1, 1, 0];
        assert_eq!(cohens_kappa_complement(&f, &g, 2).unwrap(), 1.5);
        assert_eq!(cohens_kappa_complement(&g, &f, 2).unwrap(), 1.5);
        // agreement on 2 of 4 with p_e = 0.5 -> 1
        assert_eq!(cohens_kappa_complement(&[0, 0, 1, 1], &[0, 1, 1, 0], 2).unwrap(), 1.0);
        assert!(matches!(
            cohens_kappa_complement(&[1, 1, 1], &[1, 1, 1], 3),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn kl_cases() {
        let a = vec![vec![0.1, 2.0, -1.0], vec![3.0, 0.0, 0.0]];
        assert_eq!(mean_kl(&a, &a).unwrap(), 0.0);
        // p_f ~ (1, 0) vs uniform: KL ~ ln 2 minus the tiny tail contribution
        let kl = mean_kl(&[vec![20.0, 0.0]], &[vec![0.0, 0.0]]).unwrap();
        let e = (-20f64).exp();
        let p1 = e / (1.0 + e);
        let exact = (1.0 - p1) * (2.0 * (1.0 - p1)).ln() + p1 * (2.0 * p1).ln();
        assert!((kl - exact).abs() < 1e-12);
        assert!((kl - 2f64.ln()).abs() < 1e-6);
        let b = vec![vec![0.0, 0.0, 5.0], vec![1.0, 1.0, 0.0]];
        let (ab, ba) = (mean_kl(&a, &b).unwrap(), mean_kl(&b, &a).unwrap());
        assert!(ab > 0.0 && ba > 0.0 && (ab - ba).abs() > 1e-3);
    }

    #[test]
    fn ckac_identities() {
        let mut rng = Rng::from_seed(6);
        let f: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        assert_eq!(ckac(&f, &f).unwrap(), 0.0);
        let scaled: Vec<Vec<f64>> = f.iter().map(|r| r.iter().map(|v| v * 3.7).collect()).collect();
        assert!(ckac(&f, &scaled).unwrap().abs() < 1e-12);
        let other: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let c = ckac(&f, &other).unwrap();
        assert!((0.0..=1.0).contains(&c), "{c}");
        let constant = vec![vec![1.0, 2.0]; 50];
        assert!(matches!(ckac(&f, &constant), Err(Error::Undefined(_))));
    }

    #[test]
    fn ckac_subsampling_is_seeded() {
        let mut rng = Rng::from_seed(1);
        let f: Vec<Vec<f64>> = (0..300).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let g: Vec<Vec<f64>> = f.iter().map(|r| vec![r[0] + 0.5 * rng.normal(), r[1]]).collect();
        let a = ckac_subsampled(&f, &g, 100, 4).unwrap();
        assert_eq!(a, ckac_subsampled(&f, &g, 100, 4).unwrap());
        assert_eq!(ckac_subsampled(&f, &g, 1000, 4).unwrap(), ckac(&f, &g).unwrap());
    }

    #[test]
    fn override_cases() {
        let z = [0, 1, 2, 0, 1];
        let all = OverrideDenominator::AllSamples;
        assert_eq!(
            override_analysis(&z, &z, &[2, 2, 2, 2, 2], all).unwrap(),
            OverrideFractions { overrides: 0.0, overridden: 0.0, neither: 0.0 }
        );
        // disagreements at 1, 2, 4: ensemble = zero-shot at 1, fine-tuned at 2, neither at 4
        let f = [0, 2, 0, 0, 0];
        let e = [0, 1, 0, 0, 2];
        let r = override_analysis(&z, &f, &e, all).unwrap();
        assert_eq!((r.overrides, r.overridden, r.neither), (0.2, 0.2, 0.2));
        let r = override_analysis(&z, &f, &e, OverrideDenominator::Disagreements).unwrap();
        assert!((r.overrides - 1.0 / 3.0).abs() < 1e-15);
        let r = override_analysis(&z, &f, &z, all).unwrap();
        assert_eq!(r.overridden, 0.0);
        assert_eq!(r.overrides, 0.6);
    }

    #[test]
    fn margin_cases() {
        assert_eq!(margin_stats(&[vec![3.0, 1.0], vec![3.0, 1.0]]).unwrap(), 2.0);
        let one_hot = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]];
        let scaled: Vec<Vec<f64>> = one_hot.iter().map(|r| r.iter().map(|v| v * 5.0).collect()).collect();
        assert_eq!(margin_stats(&scaled).unwrap(), 5.0 * margin_stats(&one_hot).unwrap());
        // (3 - 1) and (0.5 - 0.25): mean 1.125
        assert_eq!(margin_stats(&[vec![1.0, 3.0, -2.0], vec![0.25, 0.5, 0.0]]).unwrap(), 1.125);
    }
}

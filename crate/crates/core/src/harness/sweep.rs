//! Alpha sweep table and its CSV/JSON serializations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalResult;

/// Accuracies of one mixing coefficient on the reference test set and every
/// configured shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub reference: EvalResult,
    pub shifts: Vec<EvalResult>,
    pub avg_shifts: f64,
    pub avg_ref_shifts: f64,
}

impl SweepRow {
    /// Builds a row, computing both averages from the per-dataset results.
    pub fn new(alpha: f64, reference: EvalResult, shifts: Vec<EvalResult>) -> Self {
        let accs: Vec<f64> = shifts.iter().map(|e| e.accuracy).collect();
        let (avg_shifts, avg_ref_shifts) = averages(reference.accuracy, &accs);
        Self {
            alpha,
            reference,
            shifts,
            avg_shifts,
            avg_ref_shifts,
        }
    }
}

/// `(mean of shift accuracies, mean of reference and that mean)`. With no
/// shifts the shift average is the reference accuracy.
pub fn averages(reference: f64, shifts: &[f64]) -> (f64, f64) {
    let avg = if shifts.is_empty() {
        reference
    } else {
        shifts.iter().sum::<f64>() / shifts.len() as f64
    };
    (avg, (reference + avg) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweep {
    pub shift_names: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl AlphaSweep {
    /// `(alpha, reference accuracy)` pairs.
    pub fn reference_curve(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.alpha, r.reference.accuracy)).collect()
    }

    pub fn avg_shifts_curve(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.alpha, r.avg_shifts)).collect()
    }

    pub fn shift_curve(&self, shift: usize) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.alpha, r.shifts[shift].accuracy)).collect()
    }

    pub fn row_at(&self, alpha: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.alpha == alpha)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["alpha", "ref_acc", "ref_ci_low", "ref_ci_high"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(self.shift_names.iter().map(|s| format!("{s}_acc")));
        h.push("avg_shifts".into());
        h.push("avg_ref_shifts".into());
        h
    }

    /// CSV text; reals use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.csv_header()).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![
                r.alpha.to_string(),
                r.reference.accuracy.to_string(),
                r.reference.ci_low.to_string(),
                r.reference.ci_high.to_string(),
            ];
            rec.extend(r.shifts.iter().map(|e| e.accuracy.to_string()));
            rec.push(r.avg_shifts.to_string());
            rec.push(r.avg_ref_shifts.to_string());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Codec(format!("sweep json: {e}")))
    }
}

/// One parsed line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCsvRow {
    pub alpha: f64,
    pub ref_acc: f64,
    pub ref_ci_low: f64,
    pub ref_ci_high: f64,
    pub shift_accs: Vec<f64>,
    pub avg_shifts: f64,
    pub avg_ref_shifts: f64,
}

/// Parses `sweep.csv`, returning the shift names and rows.
pub fn parse_sweep_csv(text: &str) -> Result<(Vec<String>, Vec<SweepCsvRow>)> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Codec(e.to_string()))?.clone();
    let n = header.len();
    if n < 6 || &header[0] != "alpha" || &header[n - 1] != "avg_ref_shifts" {
        return Err(Error::Codec("not a sweep table header".into()));
    }
    let names = header.iter().skip(4).take(n - 6).map(|h| h.trim_end_matches("_acc").to_string()).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Codec(e.to_string()))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Codec(format!("`{s}`: {e}"))))
            .collect::<Result<_>>()?;
        if v.len() != n {
            return Err(Error::Codec("ragged sweep row".into()));
        }
        rows.push(SweepCsvRow {
            alpha: v[0],
            ref_acc: v[1],
            ref_ci_low: v[2],
            ref_ci_high: v[3],
            shift_accs: v[4..n - 2].to_vec(),
            avg_shifts: v[n - 2],
            avg_ref_shifts: v[n - 1],
        });
    }
    Ok((names, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::accuracy_eval;

    fn eval(tag: &str, correct: usize, n: usize) -> EvalResult {
        let preds: Vec<usize> = (0..n).map(|i| usize::from(i >= correct)).collect();
        accuracy_eval(tag, &preds, &vec![0; n]).unwrap()
    }

    fn sweep() -> AlphaSweep {
        AlphaSweep {
            shift_names: vec!["a".into(), "b".into()],
            rows: [0.0, 0.3, 1.0]
                .iter()
                .enumerate()
                .map(|(i, &alpha)| SweepRow::new(alpha, eval("ref", 5 + i, 9), vec![eval("a", 2, 7), eval("b", 3 + i, 11)]))
                .collect(),
        }
    }

    #[test]
    fn header_is_stable() {
        let text = sweep().to_csv();
        assert_eq!(
            text.lines().next().unwrap(),
            "alpha,ref_acc,ref_ci_low,ref_ci_high,a_acc,b_acc,avg_shifts,avg_ref_shifts"
        );
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn csv_parses_back_exactly() {
        let s = sweep();
        let (names, rows) = parse_sweep_csv(&s.to_csv()).unwrap();
        assert_eq!(names, s.shift_names);
        for (p, r) in rows.iter().zip(&s.rows) {
            assert_eq!(p.alpha, r.alpha);
            assert_eq!(p.ref_acc, r.reference.accuracy);
            assert_eq!(p.ref_ci_low, r.reference.ci_low);
            assert_eq!(p.ref_ci_high, r.reference.ci_high);
            assert_eq!(p.avg_shifts, r.avg_shifts);
            let (avg, both) = averages(p.ref_acc, &p.shift_accs);
            assert_eq!((avg, both), (p.avg_shifts, p.avg_ref_shifts));
        }
    }

    #[test]
    fn json_round_trip() {
        let s = sweep();
        assert_eq!(AlphaSweep::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn averages_by_definition() {
        let (a, b) = averages(0.9, &[0.5, 0.7]);
        assert_eq!(a, 0.6);
        assert_eq!(b, 0.75);
    }
}

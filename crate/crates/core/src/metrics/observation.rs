use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interpolation-curve summary against the straight line between the
/// endpoint accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationCheck {
    /// `min_alpha acc(alpha) - [(1 - alpha) acc0 + alpha acc1]`; negative
    /// means the curve dips below the line somewhere.
    pub worst_violation: f64,
    pub worst_alpha: f64,
    pub best_alpha: f64,
    pub best_accuracy: f64,
    /// `best_accuracy - max(acc0, acc1)`.
    pub gain_over_endpoints: f64,
    /// Some grid point reaches `max(acc0, acc1)`.
    pub beats_endpoints: bool,
}

pub fn observation1_check(alpha_accs: &[(f64, f64)], acc0: f64, acc1: f64) -> Result<ObservationCheck> {
    if alpha_accs.is_empty() {
        return Err(Error::Data("empty alpha curve".into()));
    }
    let mut worst = (f64::INFINITY, 0.0);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &(alpha, acc) in alpha_accs {
        let line = (1.0 - alpha) * acc0 + alpha * acc1;
        let gap = acc - line;
        if gap < worst.0 {
            worst = (gap, alpha);
        }
        if acc > best.0 {
            best = (acc, alpha);
        }
    }
    let gain = best.0 - acc0.max(acc1);
    Ok(ObservationCheck {
        worst_violation: worst.0,
        worst_alpha: worst.1,
        best_alpha: best.1,
        best_accuracy: best.0,
        gain_over_endpoints: gain,
        beats_endpoints: gain >= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_curve() {
        let curve: Vec<(f64, f64)> = (0..=10).map(|i| (f64::from(i) / 10.0, 0.7)).collect();
        let r = observation1_check(&curve, 0.7, 0.7).unwrap();
        assert!(r.worst_violation.abs() < 1e-15);
        assert!(r.beats_endpoints);
        assert_eq!(r.gain_over_endpoints, 0.0);
    }

    #[test]
    fn concave_curve_is_above_line() {
        let curve: Vec<(f64, f64)> = (1..10)
            .map(|i| {
                let a = f64::from(i) / 10.0;
                (a, 0.6 + 0.2 * a + 0.3 * a * (1.0 - a))
            })
            .collect();
        let r = observation1_check(&curve, 0.6, 0.8).unwrap();
        assert!(r.worst_violation > 0.0);
        assert!(r.beats_endpoints);
    }

    #[test]
    fn dip_is_reported() {
        let curve = vec![(0.0, 0.5), (0.5, 0.4), (1.0, 0.7)];
        let r = observation1_check(&curve, 0.5, 0.7).unwrap();
        assert!((r.worst_violation + 0.2).abs() < 1e-12);
        assert_eq!(r.worst_alpha, 0.5);
        assert_eq!(r.best_alpha, 1.0);
    }
}

use crate::error::{Error, Result};

/// First and second moment estimates for AdamW.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// One AdamW update at 1-based step `step`: decoupled decay
/// `p *= 1 - lr * wd`, then the bias-corrected adaptive step.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    step: u64,
    h: AdamWParams,
) -> Result<()> {
    if params.len() != grads.len() || moments.m.len() != params.len() || moments.v.len() != params.len() {
        return Err(Error::Structural("adamw: length mismatch".into()));
    }
    if step == 0 {
        return Err(Error::Domain("adamw step counter starts at 1".into()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let t = step as f64;
    let bc1 = 1.0 - h.beta1.powf(t);
    let bc2 = 1.0 - h.beta2.powf(t);
    let decay = 1.0 - h.lr * h.weight_decay;
    for i in 0..params.len() {
        let g = grads[i];
        params[i] *= decay;
        moments.m[i] = h.beta1 * moments.m[i] + (1.0 - h.beta1) * g;
        moments.v[i] = h.beta2 * moments.v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = moments.m[i] / bc1;
        let v_hat = moments.v[i] / bc2;
        params[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
    Ok(())
}

/// Linear warmup to `lr_max`, then cosine decay to zero at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, lr_max: f64) -> f64 {
    if step < warmup_steps {
        return lr_max * step as f64 / warmup_steps as f64;
    }
    let progress = if total_steps > warmup_steps {
        ((step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64).min(1.0)
    } else {
        1.0
    };
    lr_max * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    const H: AdamWParams = AdamWParams {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut p = vec![1.0, -2.0];
        let mut m = AdamMoments::zeros(2);
        adamw_step(&mut p, &[0.0, 0.0], &mut m, 1, H).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn zero_grad_with_decay_scales() {
        let mut p = vec![1.0, -2.0];
        let mut m = AdamMoments::zeros(2);
        let h = AdamWParams { weight_decay: 0.5, ..H };
        adamw_step(&mut p, &[0.0, 0.0], &mut m, 1, h).unwrap();
        assert_eq!(p, vec![0.95, -1.9]);
    }

    #[test]
    fn first_step_hand_unrolled() {
        // m_hat = g, v_hat = g^2, so delta = -lr * g / (|g| + eps).
        for g in [0.5, -3.0, 1e-3] {
            let mut p = vec![2.0];
            let mut m = AdamMoments::zeros(1);
            adamw_step(&mut p, &[g], &mut m, 1, H).unwrap();
            let expected = 2.0 - 0.1 * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15, "{g}: {} vs {expected}", p[0]);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut p = vec![0.0];
        let mut m = AdamMoments::zeros(1);
        assert!(matches!(adamw_step(&mut p, &[f64::NAN], &mut m, 1, H), Err(Error::Numeric(_))));
        assert!(adamw_step(&mut p, &[0.0, 1.0], &mut m, 1, H).is_err());
    }

    /// Straight transcription of the bias-corrected update, one scalar at a
    /// time, with moments carried explicitly.
    fn brute_force(p0: &[f64], grads: &[Vec<f64>], h: AdamWParams) -> Vec<f64> {
        p0.iter()
            .enumerate()
            .map(|(i, &p)| {
                let (mut p, mut m, mut v) = (p, 0.0, 0.0);
                for (t, g) in grads.iter().enumerate() {
                    let t = (t + 1) as i32;
                    m = h.beta1 * m + (1.0 - h.beta1) * g[i];
                    v = h.beta2 * v + (1.0 - h.beta2) * g[i] * g[i];
                    let mh = m / (1.0 - h.beta1.powi(t));
                    let vh = v / (1.0 - h.beta2.powi(t));
                    p -= h.lr * mh / (vh.sqrt() + h.eps);
                }
                p
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matches_brute_force(seed in any::<u64>(), steps in 1usize..20) {
            let mut rng = Rng::from_seed(seed);
            let p0: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let grads: Vec<Vec<f64>> = (0..steps).map(|_| (0..5).map(|_| rng.normal()).collect()).collect();
            let h = AdamWParams { lr: 0.01, ..H };
            let mut p = p0.clone();
            let mut m = AdamMoments::zeros(5);
            for (t, g) in grads.iter().enumerate() {
                adamw_step(&mut p, g, &mut m, t as u64 + 1, h).unwrap();
            }
            let expected = brute_force(&p0, &grads, h);
            for (a, b) in p.iter().zip(&expected) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn clip_bounds_norm(gs in proptest::collection::vec(-100f64..100.0, 1..20), max in 0.01f64..10.0) {
            let mut g = gs.clone();
            let pre = clip_global_norm(&mut g, max);
            let post = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(post <= max + 1e-12);
            if pre <= max {
                prop_assert_eq!(g, gs);
            }
        }
    }

    #[test]
    fn clip_examples() {
        let mut g = vec![0.3, 0.4];
        assert_eq!(clip_global_norm(&mut g, 1.0), 0.5);
        assert_eq!(g, vec![0.3, 0.4]);
        let mut g = vec![1.2, 1.6];
        assert_eq!(clip_global_norm(&mut g, 1.0), 2.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(lr_at(0, 100, 10, 2.0), 0.0);
        assert_eq!(lr_at(5, 100, 10, 2.0), 1.0);
        assert_eq!(lr_at(10, 100, 10, 2.0), 2.0);
        assert!(lr_at(100, 100, 10, 2.0).abs() < 1e-15);
        assert!((lr_at(55, 100, 10, 2.0) - 1.0).abs() < 1e-12);
        // continuity at the warmup boundary
        let below = lr_at(999, 1_000_000, 1000, 1.0);
        let at = lr_at(1000, 1_000_000, 1000, 1.0);
        assert!((at - below).abs() < 2e-3);
        assert_eq!(lr_at(0, 10, 0, 1.0), 1.0);
        for s in 1..100 {
            assert!(lr_at(s, 100, 10, 1.0) <= 1.0);
        }
    }
}

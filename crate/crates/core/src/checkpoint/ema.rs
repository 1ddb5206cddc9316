use serde::{Deserialize, Serialize};

use super::{Checkpoint, CheckpointMeta, ParamLayout};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmaVariant {
    /// Accumulator starts at zero; the final estimate divides by `1 - beta^T`.
    ZeroInitDebiased,
    /// Accumulator starts at the initial weights; the final estimate is the
    /// raw accumulator.
    InitBiased,
}

/// Running exponential average of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    variant: EmaVariant,
    decay: f64,
    step: u64,
    accumulator: Vec<f64>,
    layout: ParamLayout,
    init_ref: Option<Checkpoint>,
}

impl EmaState {
    pub fn zero_init(layout: ParamLayout, decay: f64) -> Result<Self> {
        check_decay(decay)?;
        Ok(Self {
            variant: EmaVariant::ZeroInitDebiased,
            decay,
            step: 0,
            accumulator: vec![0.0; layout.total_len()],
            layout,
            init_ref: None,
        })
    }

    pub fn init_biased(theta0: &Checkpoint, decay: f64) -> Result<Self> {
        check_decay(decay)?;
        Ok(Self {
            variant: EmaVariant::InitBiased,
            decay,
            step: 0,
            accumulator: theta0.values().to_vec(),
            layout: theta0.layout().clone(),
            init_ref: Some(theta0.clone()),
        })
    }

    pub fn new(variant: EmaVariant, theta0: &Checkpoint, decay: f64) -> Result<Self> {
        match variant {
            EmaVariant::ZeroInitDebiased => Self::zero_init(theta0.layout().clone(), decay),
            EmaVariant::InitBiased => Self::init_biased(theta0, decay),
        }
    }

    pub fn variant(&self) -> EmaVariant {
        self.variant
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accumulator
    }

    pub fn init_ref(&self) -> Option<&Checkpoint> {
        self.init_ref.as_ref()
    }

    /// In-place form of [`ema_update`].
    pub fn update(&mut self, theta: &Checkpoint) -> Result<()> {
        if theta.layout() != &self.layout {
            return Err(Error::Structural(
                "EMA update with a checkpoint of a different layout".into(),
            ));
        }
        let beta = self.decay;
        for (m, t) in self.accumulator.iter_mut().zip(theta.values()) {
            *m = beta * *m + (1.0 - beta) * t;
        }
        self.step += 1;
        Ok(())
    }

    /// `beta^T` for the current step count.
    pub fn decay_power(&self) -> f64 {
        match i32::try_from(self.step) {
            Ok(t) => self.decay.powi(t),
            Err(_) => self.decay.powf(self.step as f64),
        }
    }
}

fn check_decay(decay: f64) -> Result<()> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::Domain(format!("EMA decay {decay} outside [0, 1)")));
    }
    Ok(())
}

/// `mu <- beta * mu + (1 - beta) * theta_t`.
pub fn ema_update(state: &EmaState, theta_t: &Checkpoint) -> Result<EmaState> {
    let mut next = state.clone();
    next.update(theta_t)?;
    Ok(next)
}

/// Final EMA estimate: debiased for the zero-init variant, raw for the
/// init-biased one.
pub fn ema_final(state: &EmaState) -> Result<Checkpoint> {
    if state.step == 0 {
        return Err(Error::State("EMA has no accumulated steps".into()));
    }
    let values = match state.variant {
        EmaVariant::ZeroInitDebiased => {
            let denom = 1.0 - state.decay_power();
            state.accumulator.iter().map(|m| m / denom).collect()
        }
        EmaVariant::InitBiased => state.accumulator.clone(),
    };
    let meta = CheckpointMeta {
        seed: state.init_ref.as_ref().map_or(0, |c| c.meta.seed),
        step: state.step,
        tag: format!(
            "ema({}, beta={})",
            match state.variant {
                EmaVariant::ZeroInitDebiased => "zero-init-debiased",
                EmaVariant::InitBiased => "init-biased",
            },
            state.decay
        ),
    };
    Checkpoint::new(state.layout.clone(), values, meta)
}

/// Mixing coefficient `1 - beta^T` under which interpolating the initial
/// weights with the debiased EMA reproduces the init-biased EMA.
pub fn ema_recovery_alpha(decay: f64, steps: u64) -> f64 {
    let t = i32::try_from(steps).map_or(decay.powf(steps as f64), |t| decay.powi(t));
    1.0 - t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::interpolate;
    use crate::rng::Rng;

    fn ck(values: Vec<f64>) -> Checkpoint {
        let layout = ParamLayout::new([("w", vec![values.len()])]).unwrap();
        Checkpoint::new(layout, values, CheckpointMeta::default()).unwrap()
    }

    #[test]
    fn single_update_zero_init() {
        let s = EmaState::zero_init(ck(vec![0.0]).layout().clone(), 0.9).unwrap();
        let s = ema_update(&s, &ck(vec![1.0])).unwrap();
        assert!((s.accumulator()[0] - 0.1).abs() < 1e-15);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn two_updates_unrolled() {
        let mut s = EmaState::zero_init(ck(vec![0.0]).layout().clone(), 0.5).unwrap();
        s.update(&ck(vec![2.0])).unwrap();
        s.update(&ck(vec![4.0])).unwrap();
        assert_eq!(s.accumulator(), &[2.5]);
    }

    #[test]
    fn zero_decay_tracks_last() {
        let mut s = EmaState::init_biased(&ck(vec![7.0, -1.0]), 0.0).unwrap();
        for v in [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]] {
            s.update(&ck(v.to_vec())).unwrap();
        }
        assert_eq!(ema_final(&s).unwrap().values(), &[5.0, 6.0]);
    }

    #[test]
    fn debiased_after_one_step_is_theta1() {
        for beta in [0.0, 0.3, 0.9, 0.999] {
            let mut s = EmaState::zero_init(ck(vec![0.0; 3]).layout().clone(), beta).unwrap();
            let theta = ck(vec![1.5, -2.0, 0.25]);
            s.update(&theta).unwrap();
            let f = ema_final(&s).unwrap();
            for (a, b) in f.values().iter().zip(theta.values()) {
                assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn init_biased_fixed_point() {
        let theta0 = ck(vec![0.3, -0.7]);
        let mut s = EmaState::init_biased(&theta0, 0.9).unwrap();
        for _ in 0..50 {
            s.update(&theta0).unwrap();
        }
        let f = ema_final(&s).unwrap();
        for (a, b) in f.values().iter().zip(theta0.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn final_requires_steps() {
        let s = EmaState::zero_init(ck(vec![0.0]).layout().clone(), 0.9).unwrap();
        assert!(matches!(ema_final(&s), Err(Error::State(_))));
    }

    #[test]
    fn layout_mismatch_rejected() {
        let s = EmaState::zero_init(ck(vec![0.0]).layout().clone(), 0.9).unwrap();
        assert!(matches!(ema_update(&s, &ck(vec![1.0, 2.0])), Err(Error::Structural(_))));
        assert!(EmaState::zero_init(ck(vec![0.0]).layout().clone(), 1.0).is_err());
    }

    #[test]
    fn recovery_identity_random_trajectory() {
        let mut rng = Rng::from_seed(11);
        let theta0 = ck((0..20).map(|_| rng.normal()).collect());
        for beta in [0.9, 0.99, 0.999] {
            let mut debiased = EmaState::zero_init(theta0.layout().clone(), beta).unwrap();
            let mut biased = EmaState::init_biased(&theta0, beta).unwrap();
            let mut theta = theta0.values().to_vec();
            for _ in 0..100 {
                for v in theta.iter_mut() {
                    *v += 0.1 * rng.normal();
                }
                let t = ck(theta.clone());
                debiased.update(&t).unwrap();
                biased.update(&t).unwrap();
            }
            let alpha = ema_recovery_alpha(beta, 100);
            let recovered = interpolate(&theta0, &ema_final(&debiased).unwrap(), alpha).unwrap();
            let direct = ema_final(&biased).unwrap();
            let sup = recovered
                .values()
                .iter()
                .zip(direct.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(sup < 1e-10, "beta={beta} sup={sup}");
        }
    }
}

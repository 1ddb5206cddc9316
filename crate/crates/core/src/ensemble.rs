//! Weight-space and output-space ensembles of two checkpoints.

use crate::checkpoint::{interpolate, Checkpoint};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Network};
use crate::rng::Rng;
use crate::train::softmax;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// Logits of the model whose weights are `(1 - alpha) * theta0 + alpha * theta1`.
pub fn wse_predict(spec: &ModelSpec, theta0: &Checkpoint, theta1: &Checkpoint, alpha: f64, x: &[f64]) -> Result<Vec<f64>> {
    let mixed = interpolate(theta0, theta1, alpha)?;
    Network::new(spec, &mixed)?.logits(x)
}

/// Batched form; the interpolated checkpoint is built once.
pub fn wse_logits_batch(
    spec: &ModelSpec,
    theta0: &Checkpoint,
    theta1: &Checkpoint,
    alpha: f64,
    data: &Dataset,
) -> Result<Vec<Vec<f64>>> {
    let mixed = interpolate(theta0, theta1, alpha)?;
    Network::new(spec, &mixed)?.logits_batch(data)
}

fn mix(a: &[f64], b: &[f64], alpha: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - alpha) * x + alpha * y).collect()
}

/// `(1 - alpha) * f(x, theta0) + alpha * f(x, theta1)`.
pub fn ose_logits(spec: &ModelSpec, theta0: &Checkpoint, theta1: &Checkpoint, alpha: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let l0 = Network::new(spec, theta0)?.logits(x)?;
    let l1 = Network::new(spec, theta1)?.logits(x)?;
    Ok(mix_logits(&l0, &l1, alpha))
}

/// Convex combination of two logit vectors, exact at the endpoints.
pub fn mix_logits(l0: &[f64], l1: &[f64], alpha: f64) -> Vec<f64> {
    if alpha == 0.0 {
        l0.to_vec()
    } else if alpha == 1.0 {
        l1.to_vec()
    } else {
        mix(l0, l1, alpha)
    }
}

/// `(1 - alpha) * softmax(f(x, theta0)) + alpha * softmax(f(x, theta1))`.
pub fn ose_softmax(spec: &ModelSpec, theta0: &Checkpoint, theta1: &Checkpoint, alpha: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let l0 = Network::new(spec, theta0)?.logits(x)?;
    let l1 = Network::new(spec, theta1)?.logits(x)?;
    Ok(mix_softmax(&l0, &l1, alpha))
}

pub fn mix_softmax(l0: &[f64], l1: &[f64], alpha: f64) -> Vec<f64> {
    mix_logits(&softmax(l0), &softmax(l1), alpha)
}

/// Per-sample Bernoulli(alpha) choice between the two models' logits.
/// Sample `i` uses the `i`-th draw of the seeded stream.
pub fn random_interp_select(n: usize, alpha: f64, seed: u64) -> Result<Vec<bool>> {
    check_alpha(alpha)?;
    let mut rng = Rng::stream(seed, "ensemble.random_interp", 0);
    Ok((0..n).map(|_| rng.bernoulli(alpha)).collect())
}

/// Logits of `theta1` with probability `alpha`, else of `theta0`, one
/// independent draw per row of `data`.
pub fn random_interp_predict(
    spec: &ModelSpec,
    theta0: &Checkpoint,
    theta1: &Checkpoint,
    alpha: f64,
    data: &Dataset,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let pick = random_interp_select(data.len(), alpha, seed)?;
    let n0 = Network::new(spec, theta0)?;
    let n1 = Network::new(spec, theta1)?;
    data.rows()
        .zip(pick)
        .map(|(x, one)| if one { n1.logits(x) } else { n0.logits(x) })
        .collect()
}

/// Largest absolute difference between weight-space and output-space
/// logits over every sample and grid point.
pub fn verify_linear_equivalence(
    spec: &ModelSpec,
    theta0: &Checkpoint,
    theta1: &Checkpoint,
    alpha_grid: &[f64],
    eval: &Dataset,
) -> Result<f64> {
    let l0 = Network::new(spec, theta0)?.logits_batch(eval)?;
    let l1 = Network::new(spec, theta1)?.logits_batch(eval)?;
    let mut worst: f64 = 0.0;
    for &alpha in alpha_grid {
        let w = wse_logits_batch(spec, theta0, theta1, alpha, eval)?;
        for ((wr, a), b) in w.iter().zip(&l0).zip(&l1) {
            for (x, y) in wr.iter().zip(mix_logits(a, b, alpha)) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    Ok(worst)
}

/// Standard `{0, 0.05, ..., 1}` grid, computed as `i / 20`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) / 20.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::CheckpointMeta;
    use crate::datagen::{gen_reference, GenSpec, Split};
    use crate::model::{predict, with_head, Activation, HEAD};

    fn eval_data(d_in: usize, n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::from_seed(seed);
        let feats = (0..n * d_in).map(|_| rng.normal()).collect();
        Dataset::new(feats, d_in, vec![0; n], 2, "eval", Split::Test).unwrap()
    }

    #[test]
    fn endpoints_exact() {
        let spec = ModelSpec {
            layer_widths: vec![3, 4, 3],
            activation: Activation::Relu,
            k: 2,
            normalize_features: true,
        };
        let (a, b) = (spec.init(1).unwrap(), spec.init(2).unwrap());
        let x = [0.2, -0.5, 1.0];
        let la = Network::new(&spec, &a).unwrap().logits(&x).unwrap();
        let lb = Network::new(&spec, &b).unwrap().logits(&x).unwrap();
        assert_eq!(wse_predict(&spec, &a, &b, 0.0, &x).unwrap(), la);
        assert_eq!(wse_predict(&spec, &a, &b, 1.0, &x).unwrap(), lb);
        assert_eq!(ose_logits(&spec, &a, &b, 0.0, &x).unwrap(), la);
        assert_eq!(ose_logits(&spec, &a, &b, 1.0, &x).unwrap(), lb);
        assert_eq!(ose_softmax(&spec, &a, &b, 0.0, &x).unwrap(), softmax(&la));
        assert_eq!(ose_softmax(&spec, &a, &b, 1.0, &x).unwrap(), softmax(&lb));
        for alpha in [0.0, 0.3, 1.0] {
            assert_eq!(wse_predict(&spec, &a, &a, alpha, &x).unwrap(), la);
        }
        assert!(wse_predict(&spec, &a, &b, 1.2, &x).is_err());
    }

    #[test]
    fn ose_hand_case() {
        // identity encoder, head columns picked to give l0 = (1, 3), l1 = (5, -1) at x = (1, 0)
        let spec = ModelSpec {
            layer_widths: vec![2, 2],
            activation: Activation::Identity,
            k: 2,
            normalize_features: false,
        };
        let enc = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let mk = |head: [f64; 4]| {
            let mut v = enc.clone();
            v.extend(head);
            Checkpoint::new(spec.layout().unwrap(), v, CheckpointMeta::default()).unwrap()
        };
        let a = mk([1.0, 3.0, 0.0, 0.0]);
        let b = mk([5.0, -1.0, 0.0, 0.0]);
        // 0.75 * (1, 3) + 0.25 * (5, -1) = (2, 2)
        assert_eq!(ose_logits(&spec, &a, &b, 0.25, &[1.0, 0.0]).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn softmax_mix_is_a_distribution() {
        let mut rng = Rng::from_seed(5);
        for _ in 0..100 {
            let l0: Vec<f64> = (0..5).map(|_| 10.0 * rng.normal()).collect();
            let l1: Vec<f64> = (0..5).map(|_| 10.0 * rng.normal()).collect();
            let p = mix_softmax(&l0, &l1, rng.uniform());
            assert!(p.iter().all(|v| *v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_interp_frequencies() {
        assert!(random_interp_select(1000, 0.0, 1).unwrap().iter().all(|b| !b));
        assert!(random_interp_select(1000, 1.0, 1).unwrap().iter().all(|b| *b));
        let n = 100_000;
        let alpha = 0.3;
        let hits = random_interp_select(n, alpha, 9).unwrap().iter().filter(|b| **b).count() as f64;
        let sigma = (n as f64 * alpha * (1.0 - alpha)).sqrt();
        assert!((hits - n as f64 * alpha).abs() < 3.0 * sigma);
    }

    #[test]
    fn linear_model_equivalence() {
        let spec = ModelSpec {
            layer_widths: vec![4, 3],
            activation: Activation::Identity,
            k: 3,
            normalize_features: false,
        };
        let (a, b) = (spec.init(10).unwrap(), spec.init(11).unwrap());
        let d = eval_data(4, 200, 3);
        let gap = verify_linear_equivalence(&spec, &a, &b, &default_alpha_grid(), &d).unwrap();
        // Bilinear in (encoder, head), so only the shared-encoder case is exact.
        assert!(gap > 0.0);
        let b_head = with_head(&a, b.param(HEAD).unwrap()).unwrap();
        let gap = verify_linear_equivalence(&spec, &a, &b_head, &default_alpha_grid(), &d).unwrap();
        assert!(gap < 1e-9, "{gap}");
        // Shared head, different encoder: linear in the encoder parameters.
        let b_enc = with_head(&b, a.param(HEAD).unwrap()).unwrap();
        let gap = verify_linear_equivalence(&spec, &a, &b_enc, &default_alpha_grid(), &d).unwrap();
        assert!(gap < 1e-9, "{gap}");
    }

    #[test]
    fn shared_encoder_relu_equivalence() {
        let spec = ModelSpec {
            layer_widths: vec![4, 8, 5],
            activation: Activation::Relu,
            k: 3,
            normalize_features: true,
        };
        let a = spec.init(1).unwrap();
        let b = with_head(&a, spec.init(2).unwrap().param(HEAD).unwrap()).unwrap();
        let d = eval_data(4, 300, 4);
        let gap = verify_linear_equivalence(&spec, &a, &b, &default_alpha_grid(), &d).unwrap();
        assert!(gap < 1e-9, "{gap}");
    }

    #[test]
    fn midpoint_argmax_matches_logit_sum() {
        let gen = GenSpec {
            k: 3,
            d_in: 4,
            per_class_train: 5,
            per_class_test: 20,
            cluster_spread: 1.0,
            pretrain_style_count: 1,
            style_strength: 1.0,
            seed: 2,
        };
        let (_, test) = gen_reference(&gen).unwrap();
        let spec = ModelSpec {
            layer_widths: vec![4, 6, 3],
            activation: Activation::Relu,
            k: 3,
            normalize_features: false,
        };
        let (a, b) = (spec.init(5).unwrap(), spec.init(6).unwrap());
        for x in test.rows() {
            let m = ose_logits(&spec, &a, &b, 0.5, x).unwrap();
            let la = logits_of(&spec, &a, x);
            let lb = logits_of(&spec, &b, x);
            let sum: Vec<f64> = la.iter().zip(&lb).map(|(p, q)| p + q).collect();
            assert_eq!(predict(&m), predict(&sum));
        }
    }

    fn logits_of(spec: &ModelSpec, c: &Checkpoint, x: &[f64]) -> Vec<f64> {
        Network::new(spec, c).unwrap().logits(x).unwrap()
    }
}

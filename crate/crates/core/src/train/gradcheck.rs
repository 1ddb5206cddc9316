use super::{objective_and_grad, trainable_range, Batch, TrainConfig};
use crate::checkpoint::Checkpoint;
use crate::error::Result;
use crate::model::ModelSpec;
use crate::rng::Rng;

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
const MAX_COORDS: usize = 256;
/// Denominator floor, so coordinates whose true gradient is zero are judged
/// on absolute error.
const REL_FLOOR: f64 = 1e-4;

/// Worst relative error between the analytic gradient of the training
/// objective and central finite differences, over up to 256 trainable
/// coordinates (all of them when fewer, else a seeded sample).
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn grad_check(
    spec: &ModelSpec,
    c: &Checkpoint,
    anchor: &Checkpoint,
    batch: &Batch<'_>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (_, analytic) = objective_and_grad(spec, c, anchor, batch, cfg)?;
    let mut coords: Vec<usize> = trainable_range(c, cfg.mode).collect();
    if coords.len() > MAX_COORDS {
        Rng::stream(cfg.seed, "gradcheck", 0).shuffle(&mut coords);
        coords.truncate(MAX_COORDS);
    }
    let mut worst: f64 = 0.0;
    let mut values = c.values().to_vec();
    for i in coords {
        let orig = values[i];
        values[i] = orig + GRAD_CHECK_STEP;
        let plus = objective_and_grad(spec, &c.with_values(values.clone())?, anchor, batch, cfg)?.0;
        values[i] = orig - GRAD_CHECK_STEP;
        let minus = objective_and_grad(spec, &c.with_values(values.clone())?, anchor, batch, cfg)?.0;
        values[i] = orig;
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

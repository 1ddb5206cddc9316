//! Robust fine-tuning by weight-space ensembling.
//!
//! A zero-shot classifier `theta0` is fine-tuned into `theta1`, and the two
//! are combined by interpolating their parameters. The crate provides the
//! pieces to run that recipe end to end on synthetic data and measure what
//! it buys under distribution shift:
//!
//! - [`checkpoint`]: flat parameter vectors, interpolation, EMA, `.ckpt` files
//! - [`datagen`]: reference, shifted and pre-training distributions
//! - [`model`]: MLP encoder, linear head, class-prototype zero-shot head
//! - [`train`]: losses, AdamW, schedules, fine-tuning, gradient checks
//! - [`ensemble`]: weight-space and output-space ensembles
//! - [`metrics`]: accuracy intervals, effective robustness, diversity
//! - [`harness`]: config-driven experiments, tables and plots
//!
//! ```
//! use wiseft::checkpoint::{interpolate, Checkpoint, CheckpointMeta, ParamLayout};
//!
//! let layout = ParamLayout::new([("head", vec![2])]).unwrap();
//! let zero_shot = Checkpoint::new(layout.clone(), vec![0.0, 2.0], CheckpointMeta::default()).unwrap();
//! let fine_tuned = Checkpoint::new(layout, vec![2.0, 4.0], CheckpointMeta::default()).unwrap();
//! let mixed = interpolate(&zero_shot, &fine_tuned, 0.5).unwrap();
//! assert_eq!(mixed.values(), &[1.0, 3.0]);
//! ```

pub mod checkpoint;
pub mod datagen;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};

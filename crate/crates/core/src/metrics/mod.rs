//! Accuracy with exact binomial intervals, effective robustness, diversity
//! measures between two classifiers, and the interpolation-curve checks.

mod diversity;
mod interval;
mod observation;
mod robustness;

pub use diversity::{
    ckac, ckac_subsampled, cohens_kappa_complement, margin_stats, mean_kl, override_analysis,
    prediction_diversity, DiversityReport, OverrideDenominator, OverrideFractions, CKA_ROW_CAP,
};
pub use interval::{accuracy_eval, clopper_pearson, EvalResult};
pub use observation::{observation1_check, ObservationCheck};
pub use robustness::{clamp_accuracy, effective_robustness, fit_baseline, logit, sigmoid, RobustnessFit};

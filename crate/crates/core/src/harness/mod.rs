//! Config-driven experiment runner: builds the zero-shot proxy, fine-tunes,
//! sweeps the mixing coefficient, runs the analyses and writes CSV, JSON and
//! SVG artifacts.

pub mod config;
pub mod pipeline;
pub mod run;
pub mod svg;
pub mod sweep;

pub use config::{Baseline, BaselineGrid, EmaConfig, ExperimentConfig, FitModels, NamedShift};
pub use pipeline::{
    baselines_stage, diversity_stage, evaluate, finetune_stage, fit_models_stage, pretrain_stage, robustness_stage,
    reference_only_zero_shot, sweep_stage, zero_shot_head_from, BaselineResult, EmaOutcome, Experiment, FinetuneOutcome, FitModelResult,
    RobustnessReport, TargetRobustness,
};
pub use run::{plots_stage, run_experiment, run_pipeline, Artifacts, RunOutput};
pub use svg::{render_scatter_svg, LogitAxis, PlotPoint, ScatterPlot};
pub use sweep::{parse_sweep_csv, AlphaSweep, SweepRow};

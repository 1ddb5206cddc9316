//! Full pipeline and artifact directory handling.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::pipeline::{
    baselines_stage, diversity_stage, finetune_stage, fit_models_stage, pretrain_stage, robustness_stage, stage,
    sweep_stage, BaselineResult, Experiment, RobustnessReport,
};
use super::svg::{render_scatter_svg, PlotPoint, ScatterPlot};
use super::sweep::AlphaSweep;
use crate::checkpoint::encode;
use crate::error::{Error, Result};

pub const THETA0_FILE: &str = "θ0.ckpt";
pub const THETA1_FILE: &str = "θ1.ckpt";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const DIVERSITY_JSON: &str = "diversity.json";
pub const ROBUSTNESS_JSON: &str = "robustness.json";
pub const BASELINES_JSON: &str = "baselines.json";
pub const TRACE_CSV: &str = "trace.csv";
pub const CONFIG_JSON: &str = "config.json";
pub const PLOTS_DIR: &str = "plots";

/// Alphas whose points carry confidence bars in the plots.
const CI_ALPHAS: [f64; 3] = [0.0, 0.5, 1.0];

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Scatter plots: one per shift plus one for the shift average.
pub fn plots_stage(sweep: &AlphaSweep, robustness: &RobustnessReport) -> Result<Vec<(String, String)>> {
    stage("plots", || {
        let mut out = Vec::new();
        for (t, target) in robustness.targets.iter().enumerate() {
            let avg = t == sweep.shift_names.len();
            let y_of_fit = |i: usize| {
                let m = &robustness.fit_models[i];
                if avg {
                    m.avg_shifts
                } else {
                    m.shifts[t]
                }
            };
            let points = (0..robustness.fit_models.len())
                .map(|i| PlotPoint::new(robustness.fit_models[i].label.clone(), robustness.fit_models[i].reference, y_of_fit(i)))
                .collect();
            let curve: Vec<PlotPoint> = sweep
                .rows
                .iter()
                .map(|r| {
                    let y = if avg { r.avg_shifts } else { r.shifts[t].accuracy };
                    let mut p = PlotPoint::new(format!("alpha={}", r.alpha), r.reference.accuracy, y);
                    if CI_ALPHAS.contains(&r.alpha) {
                        p.x_ci = Some((r.reference.ci_low, r.reference.ci_high));
                        if !avg {
                            p.y_ci = Some((r.shifts[t].ci_low, r.shifts[t].ci_high));
                        }
                    }
                    p
                })
                .collect();
            let mut markers = Vec::new();
            if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                markers.push(PlotPoint::new("zero-shot", first.x, first.y));
                markers.push(PlotPoint::new("fine-tuned", last.x, last.y));
            }
            let plot = ScatterPlot {
                title: format!("reference vs {}", target.target),
                x_label: "reference accuracy".into(),
                y_label: format!("{} accuracy", target.target),
                points,
                fit: Some(target.fit.clone()),
                curve,
                markers,
            };
            out.push((format!("{}.svg", target.target), render_scatter_svg(&plot)?));
        }
        Ok(out)
    })
}

/// Files of one run, keyed by path relative to the output directory.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    /// Writes everything into a staging directory next to `dir`, then moves
    /// the files into `dir`. Nothing is left behind on failure.
    pub fn commit(&self, dir: &Path) -> Result<()> {
        let staging = staging_path(dir);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        let result = self.commit_via(&staging, dir);
        if staging.exists() {
            let _ = fs::remove_dir_all(&staging);
        }
        result
    }

    fn commit_via(&self, staging: &Path, dir: &Path) -> Result<()> {
        for (name, bytes) in &self.files {
            let path = staging.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        for (name, _) in &self.files {
            let target = dir.join(name);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let from = staging.join(name);
            fs::rename(&from, &target).map_err(|e| Error::io(&target, e))?;
        }
        Ok(())
    }
}

fn staging_path(dir: &Path) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "out".into());
    name.push(".staging");
    match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.join(name),
        _ => PathBuf::from(name),
    }
}

/// In-memory results of a complete run.
#[derive(Debug)]
pub struct RunOutput {
    pub sweep: AlphaSweep,
    pub robustness: RobustnessReport,
    pub baselines: Vec<BaselineResult>,
    pub artifacts: Artifacts,
}

/// Runs every stage and returns the artifacts without touching the disk.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<RunOutput> {
    let exp = Experiment::prepare(config)?;
    let theta0 = pretrain_stage(&exp)?;
    let ft = finetune_stage(&exp, &theta0)?;
    let sweep = sweep_stage(&exp, &theta0, &ft.theta1)?;
    let diversity = diversity_stage(&exp, &theta0, &ft.theta1)?;
    let fit_models = fit_models_stage(&exp)?;
    let robustness = robustness_stage(&exp, &sweep, &fit_models)?;
    let baselines = baselines_stage(&exp, &theta0, &ft.theta1, &ft.ema)?;
    let plots = plots_stage(&sweep, &robustness)?;

    let mut a = Artifacts::default();
    a.add(CONFIG_JSON, config.to_json() + "\n");
    a.add(THETA0_FILE, encode(&theta0));
    a.add(THETA1_FILE, encode(&ft.theta1));
    a.add(TRACE_CSV, ft.trace.to_csv());
    a.add(SWEEP_CSV, sweep.to_csv());
    a.add(SWEEP_JSON, to_json(&sweep));
    a.add(DIVERSITY_JSON, to_json(&diversity));
    a.add(ROBUSTNESS_JSON, to_json(&robustness));
    a.add(BASELINES_JSON, to_json(&baselines));
    for (name, svg) in plots {
        a.add(Path::new(PLOTS_DIR).join(name), svg);
    }
    Ok(RunOutput {
        sweep,
        robustness,
        baselines,
        artifacts: a,
    })
}

/// Runs the full pipeline and writes the artifact directory
/// `config.output_dir`. Returns the directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<PathBuf> {
    let out = run_pipeline(config)?;
    let dir = config.output_dir.clone();
    stage("write", || out.artifacts.commit(&dir))?;
    info!("wrote {}", dir.display());
    Ok(dir)
}

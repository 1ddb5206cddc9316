use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wiseft::checkpoint::{encode, interpolate, load, Checkpoint};
use wiseft::harness::run::{
    to_json, DIVERSITY_JSON, ROBUSTNESS_JSON, SWEEP_CSV, SWEEP_JSON, THETA0_FILE, THETA1_FILE,
    TRACE_CSV,
};
use wiseft::harness::{
    diversity_stage, finetune_stage, fit_models_stage, plots_stage, pretrain_stage, robustness_stage, run_experiment,
    sweep_stage, AlphaSweep, Artifacts, Experiment, ExperimentConfig, RobustnessReport,
};
use wiseft::metrics::fit_baseline;
use wiseft::{Error, Result};

/// Weight-space ensembling experiments on synthetic distribution shifts.
#[derive(Parser, Debug)]
#[command(name = "wiseft", version)]
struct Cli {
    /// Experiment config (JSON). The built-in default is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the zero-shot model and write θ0.ckpt.
    Pretrain,
    /// Fine-tune θ0 and write θ1.ckpt and trace.csv.
    Finetune {
        #[arg(long)]
        theta0: Option<PathBuf>,
    },
    /// Interpolate two checkpoints.
    Interpolate {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        c0: Option<PathBuf>,
        #[arg(long)]
        c1: Option<PathBuf>,
        /// Defaults to `interpolated.ckpt` in the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate the alpha grid and write sweep.csv and sweep.json.
    Sweep {
        #[arg(long)]
        theta0: Option<PathBuf>,
        #[arg(long)]
        theta1: Option<PathBuf>,
    },
    /// Write diversity.json for θ0 versus θ1.
    Diversity {
        #[arg(long)]
        theta0: Option<PathBuf>,
        #[arg(long)]
        theta1: Option<PathBuf>,
    },
    /// Fit the robustness baseline. With `--points` (CSV with columns
    /// acc_ref,acc_shift) print the fit; otherwise write robustness.json
    /// from sweep.json.
    FitBaseline {
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Render plots from sweep.json and robustness.json.
    Plot,
    /// Run the full pipeline.
    Run,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::Numeric(_) | Error::NumericAbort { .. } => 3,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ckpt(path: &Option<PathBuf>, dir: &Path, default: &str) -> Result<Checkpoint> {
    load(path.clone().unwrap_or_else(|| dir.join(default)))
}

fn read_json<T: serde::de::DeserializeOwned>(path: PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let dir = cfg.output_dir.clone();
    let mut out = Artifacts::default();
    match &cli.command {
        Command::Run => {
            run_experiment(&cfg)?;
            println!("{}", dir.display());
            return Ok(());
        }
        Command::Interpolate { alpha, c0, c1, output } => {
            if !(0.0..=1.0).contains(alpha) {
                return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
            }
            let mixed = interpolate(&ckpt(c0, &dir, THETA0_FILE)?, &ckpt(c1, &dir, THETA1_FILE)?, *alpha)?;
            let path = output.clone().unwrap_or_else(|| dir.join("interpolated.ckpt"));
            let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let name = path.file_name().ok_or_else(|| Error::Config("output must name a file".into()))?;
            out.add(name, encode(&mixed));
            out.commit(parent)?;
            println!("{}", path.display());
            return Ok(());
        }
        Command::FitBaseline { points: Some(p) } => {
            let mut r = csv::Reader::from_path(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            let mut pts = Vec::new();
            for rec in r.deserialize::<(f64, f64)>() {
                pts.push(rec.map_err(|e| Error::Codec(e.to_string()))?);
            }
            println!("{}", to_json(&fit_baseline(&pts)?).trim_end());
            return Ok(());
        }
        Command::Plot => {
            let sweep: AlphaSweep = read_json(dir.join(SWEEP_JSON))?;
            let robustness: RobustnessReport = read_json(dir.join(ROBUSTNESS_JSON))?;
            for (name, svg) in plots_stage(&sweep, &robustness)? {
                out.add(Path::new("plots").join(name), svg);
            }
            return out.commit(&dir);
        }
        _ => {}
    }

    let exp = Experiment::prepare(&cfg)?;
    match &cli.command {
        Command::Pretrain => out.add(THETA0_FILE, encode(&pretrain_stage(&exp)?)),
        Command::Finetune { theta0 } => {
            let ft = finetune_stage(&exp, &ckpt(theta0, &dir, THETA0_FILE)?)?;
            out.add(THETA1_FILE, encode(&ft.theta1));
            out.add(TRACE_CSV, ft.trace.to_csv());
        }
        Command::Sweep { theta0, theta1 } => {
            let sweep = sweep_stage(&exp, &ckpt(theta0, &dir, THETA0_FILE)?, &ckpt(theta1, &dir, THETA1_FILE)?)?;
            out.add(SWEEP_CSV, sweep.to_csv());
            out.add(SWEEP_JSON, to_json(&sweep));
        }
        Command::Diversity { theta0, theta1 } => {
            let d = diversity_stage(&exp, &ckpt(theta0, &dir, THETA0_FILE)?, &ckpt(theta1, &dir, THETA1_FILE)?)?;
            out.add(DIVERSITY_JSON, to_json(&d));
        }
        Command::FitBaseline { points: None } => {
            let sweep: AlphaSweep = read_json(dir.join(SWEEP_JSON))?;
            let fit_models = fit_models_stage(&exp)?;
            out.add(ROBUSTNESS_JSON, to_json(&robustness_stage(&exp, &sweep, &fit_models)?));
        }
        Command::Run | Command::Interpolate { .. } | Command::FitBaseline { .. } | Command::Plot => unreachable!(),
    }
    out.commit(&dir)
}

//! Command-line front end for the cloth-folding pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clothfold::experiments::{
    read_trajectory, read_training_set, summarize, sweep, write_json, write_summary_csv, write_sweep_csv,
    write_trajectory, write_training_set, ExperimentConfig, ExperimentError, FoldOutcome, Pipeline, SweepParameter,
    Trajectory,
};
use clothfold::koopman::{read_model, write_model, KoopmanModel};
use nalgebra::DVector;
use clothfold::sim::Simulator;
use log::info;

/// Number of worker threads for data generation and sweeps.
const WORKERS_ENV: &str = "CLOTHFOLD_WORKERS";

#[derive(Parser)]
#[command(name = "clothfold", version, about = "Dynamic cloth folding with a Koopman surrogate and linear MPC")]
struct Cli {
    /// TOML configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out random parabolic folds and write the training set.
    GenData,
    /// Fit the Koopman surrogate to a training set.
    Fit(FitArgs),
    /// Generate the slow two-handed target folds.
    Targets,
    /// Fold toward one target in closed loop.
    Mpc(MpcArgs),
    /// Re-simulate the controls of a recorded trajectory.
    Replay(ReplayArgs),
    /// Fold every target and check the pass criteria (exit code 2 on failure).
    Eval(EvalArgs),
    /// Vary the landmark count or horizon and tabulate final mesh errors.
    Sweep(SweepArgs),
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Args)]
struct FitArgs {
    /// Training set; defaults to `<out>/dataset.csv`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Overrides the configured landmark count.
    #[arg(long)]
    landmarks: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    /// Model file; defaults to `<out>/model.bin`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory with `target_<i>.csv`; defaults to `<out>`.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Overrides the configured horizon.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct MpcArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    target: usize,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trajectory written by `mpc` or `gen-data`.
    trajectory: PathBuf,
    /// Settling steps before the first control; use 0 for training trajectories.
    #[arg(long)]
    settle_steps: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// `landmarks` (alias `m`) or `horizon` (alias `T`).
    #[arg(long)]
    parameter: SweepParameter,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    /// Landmark-selection seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    /// Training set; generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, ExperimentError> {
    if let Ok(n) = std::env::var(WORKERS_ENV) {
        let n: usize = n.parse().map_err(|_| ExperimentError::InvalidConfig(format!("{WORKERS_ENV} must be a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    }
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    std::fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    let pipeline = Pipeline::new(config)?;

    match cli.command {
        Command::GenData => {
            let (data, trajectories) = pipeline.training_data()?;
            write_training_set(&out.join("dataset.csv"), &data)?;
            for (i, t) in trajectories.iter().enumerate() {
                write_trajectory(&out.join(format!("train_{i:03}.csv")), t)?;
            }
            println!("{} triples from {} trajectories", data.len(), trajectories.len());
        }
        Command::Fit(args) => {
            let data = read_training_set(&args.data.unwrap_or_else(|| out.join("dataset.csv")))?;
            let landmarks = args.landmarks.unwrap_or(pipeline.config.model.landmarks);
            let model = pipeline.fit(&data, landmarks, pipeline.config.model.seed)?;
            write_model(out.join("model.bin"), &model)?;
            println!("fitted {} landmarks on {} triples", model.landmark_count(), data.len());
        }
        Command::Targets => {
            let targets = pipeline.targets()?;
            for (i, phi) in targets.iter().enumerate() {
                write_trajectory(&out.join(format!("target_{i}.csv")), &single_state(&pipeline, phi))?;
            }
            println!("{} targets", targets.len());
        }
        Command::Mpc(args) => {
            let (model, targets, horizon) = load_model_and_targets(&pipeline, out, &args.model)?;
            let target = targets.get(args.target).ok_or_else(|| {
                ExperimentError::InvalidConfig(format!("target {} of {}", args.target, targets.len()))
            })?;
            let outcome = fold(&pipeline, &model, target, horizon)?;
            write_trajectory(&out.join(format!("fold_{}.csv", args.target)), &outcome.trajectory)?;
            let mut summary = pipeline.summarize(&model, horizon, std::slice::from_ref(&outcome));
            summary.folds[0].target = args.target;
            write_json(&out.join(format!("fold_{}.json", args.target)), &summary)?;
            print_fold(args.target, &outcome);
        }
        Command::Replay(args) => {
            let recorded = read_trajectory(&args.trajectory)?;
            let settle = args.settle_steps.unwrap_or(pipeline.config.run.settle_steps);
            let mut sim = Simulator::corner_grasp(pipeline.ctx.clone());
            sim.settle(settle).map_err(ExperimentError::from)?;
            let states = sim.rollout(&recorded.controls)?;
            let replayed = Trajectory {
                dt: recorded.dt,
                states: states.into_iter().map(|s| s.phi).collect(),
                controls: recorded.controls.clone(),
            };
            let deviation = recorded
                .states
                .iter()
                .zip(&replayed.states)
                .map(|(a, b)| (a - b).amax())
                .fold(0.0, f64::max);
            let name = args.trajectory.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
            write_trajectory(&out.join(format!("{name}_replay.csv")), &replayed)?;
            println!("replayed {} steps, max coordinate deviation {deviation:e} m", replayed.len());
        }
        Command::Eval(args) => {
            let (model, targets, horizon) = load_model_and_targets(&pipeline, out, &args.model)?;
            let mut outcomes = Vec::with_capacity(targets.len());
            for (i, target) in targets.iter().enumerate() {
                let outcome = fold(&pipeline, &model, target, horizon)?;
                write_trajectory(&out.join(format!("fold_{i}.csv")), &outcome.trajectory)?;
                print_fold(i, &outcome);
                outcomes.push(outcome);
            }
            let summary = pipeline.summarize(&model, horizon, &outcomes);
            write_json(&out.join("summary.json"), &summary)?;
            println!(
                "{} of {} folds within {:.2}% (need {})",
                summary.passing,
                summary.folds.len(),
                100.0 * pipeline.config.eval.max_fold_error,
                pipeline.config.eval.min_passing
            );
            if !summary.passed {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Sweep(args) => {
            let data = match &args.data {
                Some(path) => read_training_set(path)?,
                None => pipeline.training_data()?.0,
            };
            let targets = pipeline.targets()?;
            let rows = sweep(&pipeline, &data, &targets, args.parameter, &args.values, &args.seeds)?;
            let table = summarize(&rows);
            write_sweep_csv(&out.join("sweep.csv"), &rows)?;
            write_summary_csv(&out.join("sweep_summary.csv"), &table)?;
            for s in &table {
                println!(
                    "{:?} = {}: median {:.4} m (IQR {:.4}-{:.4}), {} failures",
                    s.parameter, s.value, s.median, s.q1, s.q3, s.failures
                );
            }
        }
        Command::ShowConfig => print!("{}", pipeline.config.to_toml()?),
    }
    Ok(ExitCode::SUCCESS)
}

fn single_state(pipeline: &Pipeline, phi: &DVector<f64>) -> Trajectory {
    Trajectory { dt: pipeline.ctx.config.dt, states: vec![phi.clone()], controls: Vec::new() }
}

fn load_model_and_targets(
    pipeline: &Pipeline,
    out: &Path,
    args: &ModelArgs,
) -> Result<(KoopmanModel, Vec<DVector<f64>>, usize), ExperimentError> {
    let model = read_model(args.model.clone().unwrap_or_else(|| out.join("model.bin")))?;
    let dir = args.targets.clone().unwrap_or_else(|| out.to_path_buf());
    let mut targets = Vec::new();
    while let Ok(t) = read_trajectory(&dir.join(format!("target_{}.csv", targets.len()))) {
        targets.push(t.final_state().clone());
    }
    if targets.is_empty() {
        info!("no target files in {}, generating targets", dir.display());
        targets = pipeline.targets()?;
    }
    Ok((model, targets, args.horizon.unwrap_or(pipeline.config.mpc.horizon)))
}

fn fold(pipeline: &Pipeline, model: &KoopmanModel, target: &DVector<f64>, horizon: usize) -> Result<FoldOutcome, ExperimentError> {
    let mpc = clothfold::OcpConfig { horizon, ..pipeline.config.mpc };
    pipeline.fold(model, target, &mpc)
}

fn print_fold(index: usize, outcome: &FoldOutcome) {
    let m = &outcome.metrics;
    println!(
        "target {index}: mesh error {:.4} m, fold ratio {:.3} (target {:.3}), fold error {:.2}%{}",
        m.mesh_error,
        m.fold_ratio,
        m.target_fold_ratio,
        100.0 * m.fold_error,
        if outcome.result.completed() { "" } else { ", stopped early" }
    );
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evsplat::event::ContrastThresholds;
use evsplat::pipeline::{self, RenderRequest, Resampling, RunConfig, SimulateRequest, TrainRequest};
use evsplat::trajectory::{read_poses, write_poses, Interpolation};
use evsplat::{Error, Result};

/// Gaussian-splat reconstruction from posed event streams.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// Root seed; overrides the one in any config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate events from a scene file along a pose trajectory.
    Simulate(SimulateArgs),
    /// Fit a Gaussian cloud to an event stream.
    Train(TrainArgs),
    /// Render a checkpoint at each pose of a pose file.
    Render(RenderArgs),
    /// Score renders against references with log-affine calibration.
    Eval(EvalArgs),
    /// Resample a pose file at evenly spaced times.
    PoseResample(PoseResampleArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Positive contrast threshold.
    #[arg(long, default_value_t = 0.25)]
    threshold_pos: f64,
    /// Negative contrast threshold.
    #[arg(long, default_value_t = 0.25)]
    threshold_neg: f64,
    /// Frame rate of the differenced renders, Hz.
    #[arg(long, default_value_t = 1000.0)]
    frame_rate: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint, appending to the metrics file.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many completed iterations.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write single-channel images.
    #[arg(long)]
    mono: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    renders: PathBuf,
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PoseResampleArgs {
    #[arg(long)]
    poses: PathBuf,
    /// Output pose file.
    #[arg(long)]
    out: PathBuf,
    /// Number of evenly spaced samples.
    #[arg(long, conflicts_with = "rate", required_unless_present = "rate")]
    count: Option<usize>,
    /// Sample rate, Hz.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, value_enum, default_value = "cubic")]
    interpolation: InterpolationArg,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum InterpolationArg {
    Cubic,
    Linear,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => {
            let thresholds =
                ContrastThresholds::new(a.threshold_pos, a.threshold_neg).map_err(|e| Error::Config(e.to_string()))?;
            let manifest = pipeline::simulate(&SimulateRequest {
                scene: a.scene,
                trajectory: a.trajectory,
                camera: a.camera,
                out: a.out,
                thresholds,
                frame_rate: a.frame_rate,
                seed: cli.seed,
            })?;
            println!("wrote {} files", manifest.entries.len());
        }
        Command::Train(a) => {
            let mut cfg = RunConfig::load(&a.config)?;
            if let Some(seed) = cli.seed {
                cfg = cfg.with_seed(seed);
            }
            pipeline::train(
                &cfg,
                &TrainRequest {
                    out: a.out,
                    resume: a.resume,
                    stop_after: a.stop_after,
                },
            )?;
        }
        Command::Render(a) => {
            let manifest = pipeline::render(&RenderRequest {
                checkpoint: a.checkpoint,
                poses: a.poses,
                camera: a.camera,
                out: a.out,
                mono: a.mono,
            })?;
            println!("wrote {} files", manifest.entries.len());
        }
        Command::Eval(a) => {
            let report = pipeline::eval(&a.renders, &a.references, &a.out)?;
            print!("{}", report.summary());
        }
        Command::PoseResample(a) => {
            let how = match (a.count, a.rate) {
                (Some(n), _) => Resampling::Count(n),
                (None, Some(r)) => Resampling::Rate(r),
                (None, None) => unreachable!("clap requires one of --count and --rate"),
            };
            let mode = match a.interpolation {
                InterpolationArg::Cubic => Interpolation::Cubic,
                InterpolationArg::Linear => Interpolation::Linear,
            };
            let out = pipeline::resample_poses(&read_poses(&a.poses)?, mode, how)?;
            write_poses(&out, &a.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("EVSPLAT_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

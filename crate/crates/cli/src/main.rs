//! `lowlight`: simulate, train, enhance, decompose, evaluate, fit-niqe, report.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 I/O or format error,
//! 3 numerical failure.

mod commands;
mod manifest;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use lowlight_core::Error as CoreError;

/// Bad arguments or missing inputs detected by the front end.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn core_exit_code(e: &CoreError) -> u8 {
    use CoreError::*;
    match e {
        NonFiniteLoss { .. } => 3,
        Io { .. }
        | UnsupportedFormat(_)
        | Decode { .. }
        | Encode { .. }
        | CorruptCheckpoint(_)
        | VersionMismatch { .. }
        | CorruptNiqeModel(_)
        | ShapeMismatch { .. } => 2,
        EmptyImage
        | InvalidArgument(_)
        | CropTooLarge { .. }
        | EmptyIntersection { .. }
        | IdMismatch { .. }
        | SpatialSize { .. }
        | ChannelCount { .. }
        | TooFewImages { .. }
        | TooFewPatches { .. }
        | ImageTooSmall { .. }
        | Config(_) => 1,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_exit_code(e);
        }
    }
    2
}

#[derive(Parser, Debug)]
#[command(name = "lowlight", about = "Low-light image enhancement by Retinex decomposition with a shot-noise branch")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build low/high pairs at a ladder of exposure levels from clean images.
    Simulate(SimulateArgs),
    /// Train a model on a paired dataset.
    Train(TrainArgs),
    /// Enhance one image or a directory tree.
    Enhance(InferArgs),
    /// Write illumination, reflectance, noise and enhanced maps.
    Decompose(InferArgs),
    /// Score outputs against references.
    Evaluate(EvaluateArgs),
    /// Fit a NIQE pristine model from a directory of clean images.
    FitNiqe(FitNiqeArgs),
    /// Loss curves and channel histograms from a run directory.
    Report(ReportArgs),
    /// Write procedural clean scenes, useful as input for `simulate`.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub input_dir: PathBuf,
    #[arg(long)]
    pub out_root: PathBuf,
    /// Number of exposure levels, starting at 0.30 and halving.
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    #[arg(long, default_value_t = 255.0)]
    pub photon_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root holding `low/` and `high/`.
    #[arg(long)]
    pub data: PathBuf,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint (its config is kept; `--epochs` may extend it).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Extra `key=value` overrides, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub photon_scale: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Image file or directory (searched recursively).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Require this model width.
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub reference_dir: PathBuf,
    #[arg(long)]
    pub niqe_model: Option<PathBuf>,
    /// Directory receiving `metrics.csv` and the manifest.
    #[arg(long, default_value = "evaluation")]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitNiqeArgs {
    #[arg(long)]
    pub pristine_dir: PathBuf,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long, default_value_t = lowlight_core::metrics::DEFAULT_PATCH)]
    pub patch: usize,
    #[arg(long, default_value_t = lowlight_core::metrics::DEFAULT_SHARPNESS_QUANTILE)]
    pub sharpness_quantile: f64,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Defaults to `<run-dir>/report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Images whose channel histograms should be tabulated.
    #[arg(long)]
    pub images: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn version_string() -> String {
    format!(
        "{} (checkpoint format {}, NIQE model format {})",
        lowlight_core::VERSION,
        lowlight_core::checkpoint::FORMAT_VERSION,
        lowlight_core::metrics::NIQE_FORMAT_VERSION
    )
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(version_string().into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };

    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Enhance(a) => commands::infer(a, false),
        Command::Decompose(a) => commands::infer(a, true),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::FitNiqe(a) => commands::fit_niqe(a),
        Command::Report(a) => commands::report(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

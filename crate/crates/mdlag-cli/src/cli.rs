//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mdlag::Method;

/// Delayed latents across groups: simulate, fit, predict and benchmark.
#[derive(Debug, Parser)]
#[command(name = "mdlag", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its ground-truth model.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset.
    Fit(FitArgs),
    /// Held-out prediction with a fitted model.
    Predict(PredictArgs),
    /// Runtime scaling over trial length or group count.
    Bench(BenchArgs),
    /// GP parameter estimates and selected dimensionality over a grid.
    BiasSweep(BiasSweepArgs),
    /// Refine a fitted model with time-domain iterations.
    Finetune(FinetuneArgs),
}

/// Fitting method as a command-line value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Time,
    Inducing,
    Frequency,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Time => Method::Time,
            MethodArg::Inducing => Method::Inducing,
            MethodArg::Frequency => Method::Frequency,
        }
    }
}

/// How synthetic latents are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Generator {
    /// Exact Gaussian-process draws in the time domain.
    Time,
    /// Spectral draws on an extended grid.
    Frequency,
}

/// Scenario overrides shared by the commands that generate data.
#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Preset: demo, scaling_T, scaling_M or model_selection.
    #[arg(long, default_value = "demo", conflicts_with = "config")]
    pub scenario: String,
    /// JSON scenario configuration used instead of a preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of trials.
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Samples per trial.
    #[arg(long = "T")]
    pub t: Option<usize>,
    /// Signal-to-noise ratio of every group.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Latent generator.
    #[arg(long, value_enum, default_value_t = Generator::Frequency)]
    pub generator: Generator,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; receives data.json/.bin and truth.json/.bin.
    #[arg(long)]
    pub out: PathBuf,
}

/// Fitting options shared by the commands that fit.
#[derive(Debug, Clone, Args)]
pub struct FitOptions {
    /// Fitting method.
    #[arg(long, value_enum, default_value_t = MethodArg::Frequency)]
    pub method: MethodArg,
    /// Initial number of latents.
    #[arg(long, default_value_t = 8)]
    pub latents: usize,
    /// Inducing points per trial (inducing method).
    #[arg(long)]
    pub inducing_points: Option<usize>,
    /// Hamming taper before the frequency transform.
    #[arg(long)]
    pub taper: bool,
    /// Relative lower-bound tolerance.
    #[arg(long, default_value_t = mdlag::fit::DEFAULT_TOL)]
    pub tol: f64,
    /// Iteration cap.
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Initialization seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Size guard `p·M·T` of the time method.
    #[arg(long, default_value_t = mdlag::fit::DEFAULT_TIME_GUARD)]
    pub time_guard: usize,
    /// Run the time method past its size guard.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub fit: FitOptions,
    /// JSON fit configuration; replaces the fitting flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single-threaded execution for bit-identical reruns.
    #[arg(long)]
    pub deterministic: bool,
    /// Output directory; receives model.json/.bin and report.json.
    #[arg(long)]
    pub out: PathBuf,
}

/// Held-out prediction mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictMode {
    /// Leave one group out.
    Lgo,
    /// Leave one unit out, for every unit in turn.
    Luo,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model checkpoint manifest.
    #[arg(long)]
    pub model: PathBuf,
    /// Test dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = PredictMode::Lgo)]
    pub mode: PredictMode,
    /// Group to predict (leave-group-out).
    #[arg(long, default_value_t = 0)]
    pub held_out: usize,
    /// Inference route (leave-group-out).
    #[arg(long, value_enum, default_value_t = MethodArg::Frequency)]
    pub route: MethodArg,
    /// Inducing points of the inducing route.
    #[arg(long)]
    pub inducing_points: Option<usize>,
    /// Samples dropped at each end of a trial (leave-unit-out).
    #[arg(long)]
    pub edge_trim: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

/// Axis of a scaling benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Samples per trial.
    #[value(name = "T")]
    T,
    /// Number of groups.
    #[value(name = "M")]
    M,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = Axis::T)]
    pub axis: Axis,
    /// Grid sizes along the axis.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    /// Methods to time.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "frequency")]
    pub methods: Vec<MethodArg>,
    /// Number of seeds per grid point.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Trials per dataset.
    #[arg(long = "N", default_value_t = 25)]
    pub n: usize,
    /// Units in total (split evenly over groups on the M axis).
    #[arg(long, default_value_t = 24)]
    pub units: usize,
    /// Samples per trial on the M axis.
    #[arg(long = "T", default_value_t = 50)]
    pub t: usize,
    /// Latents of every fit.
    #[arg(long, default_value_t = 1)]
    pub latents: usize,
    /// Inducing points per trial.
    #[arg(long, default_value_t = 13)]
    pub inducing_points: usize,
    /// Iteration cap of every fit.
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Relative lower-bound tolerance.
    #[arg(long, default_value_t = mdlag::fit::DEFAULT_TOL)]
    pub tol: f64,
    /// Size guard `p·M·T` of the time method.
    #[arg(long, default_value_t = mdlag::fit::DEFAULT_TIME_GUARD)]
    pub time_guard: usize,
    /// Run the time method past its size guard.
    #[arg(long)]
    pub force: bool,
    /// Run grid points concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Raw CSV; the slope summary goes next to it with a `.slopes.csv` suffix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BiasSweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Trial lengths to sweep.
    #[arg(long = "T-grid", value_delimiter = ',', conflicts_with = "snr_grid")]
    pub t_grid: Vec<usize>,
    /// Signal-to-noise ratios to sweep.
    #[arg(long, value_delimiter = ',')]
    pub snr_grid: Vec<f64>,
    /// Number of seeds per grid point.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Initial number of latents.
    #[arg(long, default_value_t = 1)]
    pub latents: usize,
    /// Hamming taper before the frequency transform.
    #[arg(long)]
    pub taper: bool,
    /// Also fit with the time method for reference.
    #[arg(long)]
    pub with_time: bool,
    /// Relative lower-bound tolerance.
    #[arg(long, default_value_t = mdlag::fit::DEFAULT_TOL)]
    pub tol: f64,
    /// Iteration cap of every fit.
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Checkpoint of a frequency fit.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset the model was fitted to.
    #[arg(long)]
    pub data: PathBuf,
    /// Time-domain iterations.
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    /// Relative lower-bound tolerance.
    #[arg(long, default_value_t = mdlag::fit::DEFAULT_TOL)]
    pub tol: f64,
    /// Size guard `p·M·T` of the time method.
    #[arg(long, default_value_t = mdlag::fit::DEFAULT_TIME_GUARD)]
    pub time_guard: usize,
    /// Run past the size guard.
    #[arg(long)]
    pub force: bool,
    /// Output directory; receives model.json/.bin and report.json.
    #[arg(long)]
    pub out: PathBuf,
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Benchmark and fuzz SLAM algorithms over recorded sensor streams.
#[derive(Debug, Parser)]
#[command(name = "posefuzz", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Campaign JSON file (an output JSON with an embedded `config` also works).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; overrides the campaign's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for result files; overrides the campaign's `output_dir`.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads for sweeps and loop-threshold searches (0 = one per CPU).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Exit 0 even when the algorithm fails.
    #[arg(long, global = true)]
    pub allow_failure: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the sensor table and frame statistics of a dataset.
    Inspect(InspectArgs),
    /// Write a synthetic camera + ground-truth dataset.
    Synth(SynthArgs),
    /// Run an algorithm once over a (possibly perturbed) dataset and score it.
    Run(RunArgs),
    /// Sweep one perturbation kind over a range of values with repetitions.
    Fuzz(FuzzArgs),
    /// Extract failure windows and metric correlations from a run.json.
    Diagnose(DiagnoseArgs),
    /// Estimate the image-metric differences at which loop closure stops.
    Loopthresh(LoopArgs),
    /// Serve the built-in mock algorithm on stdin/stdout.
    #[command(hide = true)]
    Mock {
        /// Mock configuration JSON.
        #[arg(value_name = "JSON")]
        mock_json: String,
    },
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub dataset: PathBuf,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ShapeArg {
    Circle,
    FigureEight,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "circle")]
    pub shape: ShapeArg,
    #[arg(long, default_value_t = 10.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 10.0)]
    pub rate_hz: f64,
    /// Seconds per lap.
    #[arg(long, default_value_t = 10.0)]
    pub period_s: f64,
    #[arg(long, default_value_t = 2.0)]
    pub radius_m: f64,
    #[arg(long, default_value_t = 160)]
    pub width: u32,
    #[arg(long, default_value_t = 120)]
    pub height: u32,
    #[arg(long)]
    pub rgb: bool,
}

/// Dataset and algorithm given on the command line instead of the campaign file.
#[derive(Debug, Clone, Default, Args)]
pub struct TargetArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Algorithm program and arguments, after `--`.
    #[arg(last = true)]
    pub algorithm: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub target: TargetArgs,
    /// Skip frames with a smaller stream index (restart a run mid-sequence).
    #[arg(long, default_value_t = 0)]
    pub start_from: u64,
    /// Camera whose metrics feed the diagnostics (default: first 8-bit camera).
    #[arg(long)]
    pub metrics_sensor: Option<u32>,
}

#[derive(Debug, Args)]
pub struct FuzzArgs {
    #[command(flatten)]
    pub target: TargetArgs,
    /// Perturbation kind to sweep; replaces the campaign's `sweep` section.
    #[arg(long)]
    pub kind: Option<String>,
    /// Explicit values, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub values: Vec<i64>,
    /// Grid step; alone it spans the kind's range around the identity value.
    #[arg(long, allow_negative_numbers = true)]
    pub step: Option<i64>,
    #[arg(long)]
    pub repetitions: Option<u32>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// run.json to analyse (default: `run.json` in the output directory).
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Frame RPE above this many metres is a failure.
    #[arg(long)]
    pub rpe_threshold_m: Option<f64>,
    /// Stuck-pose tolerance in metres.
    #[arg(long)]
    pub stuck_epsilon_m: Option<f64>,
    /// Frames the pose must stay still to count as stuck.
    #[arg(long)]
    pub stuck_frames: Option<usize>,
    #[arg(long)]
    pub no_stuck: bool,
    /// Per-frame processing time above this many milliseconds is a failure.
    #[arg(long)]
    pub max_frame_time_ms: Option<f64>,
    /// Frames kept on each side of a failure.
    #[arg(long)]
    pub window_frames: Option<u64>,
    /// Restrict correlation to the first failure window.
    #[arg(long)]
    pub correlate_first_window: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SideArg {
    A,
    B,
}

#[derive(Debug, Args)]
pub struct LoopArgs {
    #[command(flatten)]
    pub target: TargetArgs,
    /// Pairs of camera-frame indices: a JSON array of [a, b] or one `a b` per line.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Single perturbation kind to search; replaces the campaign's `loop.kinds`.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub increment: Option<i64>,
    #[arg(long)]
    pub half_window: Option<u64>,
    #[arg(long, value_enum)]
    pub perturb: Option<SideArg>,
    #[arg(long)]
    pub sensor: Option<u32>,
}

//! `pathgauge`: estimate end-to-end available bandwidth from paired
//! one-way-delay measurements of two packet sizes, and quantify how the
//! estimate's error shrinks with the number of measurements.
//!
//! Subcommands wire the library stages into scriptable workflows:
//! `fetch` collects delay records, `estimate` turns record files into
//! bandwidth estimates and SD tables, `simulate` reproduces the
//! estimator's error tables by Monte Carlo, `calibrate` answers "how many
//! measurements do I need", and `report` summarizes a run directory.
//!
//! Contract for scripting: exit 0 on success, 1 on usage or configuration
//! errors, 2 on data errors, 3 when a calibration target is not reached.
//! Human-readable summaries go to stderr; machine output goes to files
//! and stdout.

mod cmd_calibrate;
mod cmd_estimate;
mod cmd_fetch;
mod cmd_report;
mod cmd_simulate;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use pathgauge::model::{Direction, DEFAULT_SEED};

#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 1: bad flags or configuration.
    #[error("{0}")]
    Usage(String),
    /// Exit 2: missing or invalid input data.
    #[error("{0}")]
    Data(String),
    /// Exit 3: the calibration target is beyond the tabulated range.
    #[error("{0}")]
    TargetNotReached(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::TargetNotReached(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "pathgauge",
    version,
    about = "Available-bandwidth estimation from paired one-way delays of two packet sizes",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect delay records from files or TCP collectors into canonical record files
    Fetch(FetchArgs),
    /// Estimate bandwidth from record files: windowed estimates, SD-vs-n, 2-sigma minimum n, asymmetry
    Estimate(EstimateArgs),
    /// Monte Carlo simulation of the estimator's relative error versus window size
    Simulate(SimulateArgs),
    /// Correct an error table between noise regimes and find the smallest adequate n
    Calibrate(CalibrateArgs),
    /// Summarize the manifests and report files of a run directory
    Report(ReportArgs),
}

#[derive(Args)]
pub struct FetchArgs {
    /// Source spec 'FROM->TO=file:PATH' or 'FROM->TO=tcp:HOST[:PORT]';
    /// repeat once for the reverse direction
    #[arg(long = "source", value_name = "SPEC", required = true)]
    pub sources: Vec<String>,
    /// Directory the record files are written into
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out_dir: PathBuf,
    /// Line sent to a TCP source right after connecting
    #[arg(long, value_name = "TEXT")]
    pub request_line: Option<String>,
    /// Give up on a TCP source when it stays silent this long (seconds)
    #[arg(long, value_name = "SECS", default_value_t = 30.0)]
    pub idle_timeout_secs: f64,
    /// Stop each source after this many input lines
    #[arg(long, value_name = "N")]
    pub max_lines: Option<u64>,
    /// Reader threads; 2 collects both directions concurrently
    #[arg(long, value_name = "N", default_value_t = 2)]
    pub jobs: usize,
}

#[derive(Args)]
pub struct EstimateArgs {
    /// Record file spec 'FROM->TO=PATH'; repeat once for the reverse
    /// direction to get the asymmetry report
    #[arg(long = "records", value_name = "SPEC", required = true)]
    pub records: Vec<String>,
    /// Directory the CSV reports are written into
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out_dir: PathBuf,
    /// Comma-separated window sizes for the SD table
    #[arg(long, value_name = "N,N,...", value_delimiter = ',')]
    pub n_grid: Option<Vec<u32>>,
    /// How small and large records are matched into pairs
    #[arg(long, value_enum, default_value_t = PairingArg::Adjacent)]
    pub pairing: PairingArg,
    /// Nearest-time pairing only: maximum send-time gap in seconds
    #[arg(long, value_name = "SECS", default_value_t = 1.0)]
    pub max_gap: f64,
    /// Geometric-mean SD ratio beyond which direction asymmetry is flagged
    #[arg(long, value_name = "RATIO", default_value_t = pathgauge::estimator::DEFAULT_ASYMMETRY_THRESHOLD)]
    pub asymmetry_threshold: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairingArg {
    /// k-th small record with k-th large record
    Adjacent,
    /// each small record with the nearest unused large record in time
    Nearest,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Named experiment configuration (explicit flags override its values)
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Exponential delay-noise rate, events per second
    #[arg(long, value_name = "RATE")]
    pub lambda: Option<f64>,
    /// Fixed delay floor in seconds
    #[arg(long, value_name = "SECS")]
    pub d_min: Option<f64>,
    /// True delay difference between size classes, seconds
    #[arg(long, value_name = "SECS")]
    pub delta_d: Option<f64>,
    /// Payload size difference in bits
    #[arg(long, value_name = "BITS")]
    pub delta_w: Option<f64>,
    /// Monte Carlo trials per table row
    #[arg(long, value_name = "N")]
    pub trials: Option<u64>,
    /// Comma-separated window sizes to tabulate
    #[arg(long, value_name = "N,N,...", value_delimiter = ',')]
    pub n_grid: Option<Vec<u32>>,
    /// Clock quantum in seconds; 0 disables quantization
    #[arg(long, value_name = "SECS")]
    pub quantum: Option<f64>,
    /// Statistic reduced over the kept estimate-to-truth ratios
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Symmetric quantile trim fraction applied before the metric
    #[arg(long, value_name = "FRACTION")]
    pub trim: Option<f64>,
    /// RNG seed; the flag overrides the environment variable
    #[arg(long, value_name = "N", env = "PATHGAUGE_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads; the output is identical for any value
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
    /// Output stem: writes <STEM>.csv, <STEM>.json, <STEM>.manifest.json
    #[arg(long, value_name = "STEM", default_value = "eta")]
    pub out: PathBuf,
    /// Sweep the noise rate over these values (cartesian with --sweep-delta-d)
    #[arg(long, value_name = "RATE,RATE,...", value_delimiter = ',')]
    pub sweep_lambda: Option<Vec<f64>>,
    /// Sweep the delay difference over these values
    #[arg(long, value_name = "SECS,SECS,...", value_delimiter = ',')]
    pub sweep_delta_d: Option<Vec<f64>>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    /// noise rate 1000/s, delay difference 8e-4 s, 8000 bits, canonical 7-point n grid
    Ipv4Table3,
    /// the same run with the 1.53 regime correction divided out of the results
    Ipv6Table4,
}

impl PresetArg {
    pub fn name(self) -> &'static str {
        match self {
            PresetArg::Ipv4Table3 => "ipv4-table3",
            PresetArg::Ipv6Table4 => "ipv6-table4",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    /// root-mean-square deviation of the ratio from 1
    Rms,
    /// mean absolute deviation of the ratio from 1
    MeanAbs,
}

#[derive(Args)]
pub struct CalibrateArgs {
    /// Error-table CSV (n,eta_percent; comments and a skipped column are fine)
    #[arg(long, value_name = "FILE")]
    pub table: PathBuf,
    /// Correction factor for the noise-rate change
    #[arg(long, value_name = "FACTOR", default_value_t = 1.0)]
    pub k_lambda: f64,
    /// Correction factor for the payload-difference change
    #[arg(long, value_name = "FACTOR", default_value_t = 1.0)]
    pub k_delta_d: f64,
    /// Combined correction factor (replaces the split factors)
    #[arg(long, value_name = "FACTOR", conflicts_with_all = ["k_lambda", "k_delta_d"])]
    pub k_combined: Option<f64>,
    /// Target relative error in percent
    #[arg(long, value_name = "PERCENT")]
    pub target: f64,
    /// Interpolate between tabulated n on the log-log power-law line
    #[arg(long)]
    pub interpolate: bool,
    /// Optional output stem for the corrected table (<STEM>.csv + manifest)
    #[arg(long, value_name = "STEM")]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run directory holding manifest sidecars and report files
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub dir: PathBuf,
}

/// Split a `FROM->TO=REST` spec into its direction and payload.
pub fn parse_direction_spec(spec: &str, what: &str) -> Result<(Direction, String), CliError> {
    let (label, rest) = spec.split_once('=').ok_or_else(|| {
        CliError::Usage(format!("{what} spec {spec:?} must look like FROM->TO=..."))
    })?;
    let direction = Direction::parse_label(label).ok_or_else(|| {
        CliError::Usage(format!("{what} spec {spec:?}: {label:?} is not a FROM->TO direction"))
    })?;
    Ok((direction, rest.to_string()))
}

/// Check a 1-or-2 direction list: non-empty, at most two, no repeats.
pub fn check_direction_count(directions: &[Direction], what: &str) -> Result<(), CliError> {
    if directions.is_empty() || directions.len() > 2 {
        return Err(CliError::Usage(format!(
            "expected one or two --{what} flags, got {}",
            directions.len()
        )));
    }
    if directions.len() == 2 && directions[0] == directions[1] {
        return Err(CliError::Usage(format!(
            "the two --{what} flags must describe different directions, both are {}",
            directions[0]
        )));
    }
    Ok(())
}

/// Filesystem-safe stem for per-direction output files.
pub fn direction_file_stem(direction: &Direction) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
            .collect()
    };
    format!("{}-to-{}", clean(&direction.from), clean(&direction.to))
}

/// Sort, deduplicate, and sanity-check an n grid from the command line.
pub fn resolve_n_grid(given: Option<&[u32]>, default: &[u32]) -> Result<Vec<u32>, CliError> {
    let mut grid = given.map(<[u32]>::to_vec).unwrap_or_else(|| default.to_vec());
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(CliError::Usage("--n-grid must list at least one window size".into()));
    }
    if grid[0] == 0 {
        return Err(CliError::Usage("--n-grid entries must be at least 1".into()));
    }
    Ok(grid)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if informational { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let result = match &cli.command {
        Command::Fetch(args) => cmd_fetch::run(args),
        Command::Estimate(args) => cmd_estimate::run(args),
        Command::Simulate(args) => cmd_simulate::run(args),
        Command::Calibrate(args) => cmd_calibrate::run(args),
        Command::Report(args) => cmd_report::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

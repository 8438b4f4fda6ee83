//! `covshift` command-line harness.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 when
//! the data cannot be read, written or processed.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<covshift::Error> for CliError {
    fn from(e: covshift::Error) -> Self {
        use covshift::Error as E;
        match e {
            E::Config(_) | E::InvalidRule(_) | E::InvalidSpec(_) | E::Unsupported(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "covshift", version, about = "Dyadic tree classifiers under covariate shift")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic source/target sample and write it as CSV.
    Gen(GenArgs),
    /// Split a labelled CSV into source and target files by a threshold rule.
    Split(SplitArgs),
    /// Fit one method on a training CSV and report its risk on a test CSV.
    Fit(FitArgs),
    /// Run methods over a sample-size grid; writes bench.csv and bench.svg.
    Bench(BenchArgs),
    /// Estimate a transfer-exponent curve and its log-log slope.
    Exponent(ExponentArgs),
}

/// Synthetic distribution pair.
#[derive(Debug, Args, Clone)]
pub struct SpecArgs {
    /// distance-power, compensated, power-line or non-doubling.
    #[arg(long, default_value = "distance-power")]
    pub family: String,
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    /// Dimension k of the singular set.
    #[arg(long, default_value_t = 0)]
    pub singular_dim: usize,
    /// Singularity strength.
    #[arg(long, default_value_t = 5.0)]
    pub nu: f64,
    /// sine, linear or constant:<value>; defaults to the family's own.
    #[arg(long)]
    pub eta: Option<String>,
}

/// Settings shared by the fitting subcommands.
#[derive(Debug, Args, Clone)]
pub struct FitSettings {
    /// regular or cyclical.
    #[arg(long, default_value = "cyclical")]
    pub tree: String,
    /// ICI width constant, or `theoretical`.
    #[arg(long, default_value = "0.25")]
    pub width: String,
    #[arg(long)]
    pub start_level: Option<u32>,
    #[arg(long)]
    pub cap_level: Option<u32>,
    #[arg(long, default_value_t = 2)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 1000)]
    pub n_source: usize,
    #[arg(long, default_value_t = 100)]
    pub n_target: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; `-` writes to stdout.
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    /// Flat TOML file with defaults for these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Name of the label column.
    #[arg(long, default_value = "label")]
    pub label: String,
    /// Comma-separated feature indices that must all exceed the threshold.
    #[arg(long)]
    pub features: String,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Probability of keeping each row.
    #[arg(long, default_value_t = 1.0)]
    pub accept_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub source_out: PathBuf,
    #[arg(long)]
    pub target_out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training CSV with an origin column (Q, P or P<k>).
    #[arg(long)]
    pub train: PathBuf,
    /// Test CSV; its labels are the ground truth.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "label")]
    pub label: String,
    /// AD, CV, FCV, IWCV, SN, SNQ or ORACLE_LEVEL.
    #[arg(long, default_value = "AD")]
    pub method: String,
    #[command(flatten)]
    pub settings: FitSettings,
    /// Optional file for the predicted labels, one per line.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Benchmark a labelled CSV instead of a synthetic pair.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label: String,
    /// Split rule for `--data`: comma-separated feature indices.
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    pub accept_prob: f64,
    /// Comma-separated method names.
    #[arg(long, default_value = "AD,CV")]
    pub methods: String,
    /// Comma-separated `nPxnQ` pairs, e.g. `1000x100,2000x100`.
    #[arg(long, default_value = "1000x100")]
    pub grid: String,
    #[arg(long, default_value_t = 10)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 5000)]
    pub test_size: usize,
    #[command(flatten)]
    pub settings: FitSettings,
    /// Record wall time per fit. Turn off for byte-identical reruns.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub timing: bool,
    /// x axis of the plot: nP or nQ.
    #[arg(long, default_value = "nP")]
    pub plot_x: String,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExponentArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Source CSV; with `--target`, estimates from samples instead of the
    /// analytic spec.
    #[arg(long, requires = "target")]
    pub source: Option<PathBuf>,
    #[arg(long, requires = "source")]
    pub target: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label: String,
    /// phi, lambda-occupied or lambda-ambient (analytic only).
    #[arg(long, default_value = "phi")]
    pub estimator: String,
    /// Coarsest level; radius 2^-from.
    #[arg(long, default_value_t = 3)]
    pub from: u32,
    /// Finest level.
    #[arg(long, default_value_t = 8)]
    pub to: u32,
    #[arg(long, default_value_t = 1_000_000)]
    pub n_mc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Curve CSV; `-` writes to stdout.
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn run(args: Vec<OsString>) -> Result<(), CliError> {
    let args = config::expand(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            let text = e.render().to_string();
            let text = text.strip_prefix("error: ").unwrap_or(&text);
            return Err(CliError::Usage(text.trim_end().to_string()));
        }
    };
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Split(a) => commands::split(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Exponent(a) => commands::exponent(&a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}

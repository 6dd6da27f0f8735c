//! `modcascade` command line.
//!
//! Exit codes: 0 success, 1 findings (infeasible derivation, failed model,
//! count mismatch), 2 usage, 3 I/O or backend failure. Data goes to stdout,
//! diagnostics to stderr.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

mod commands;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "modcascade",
    version,
    about = "Two-stage moderation cascade and evaluation harness"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Moderate one image.
    Moderate(ModerateArgs),
    /// Evaluate a model suite on a manifest subset.
    Eval(EvalArgs),
    /// Time every model in a suite and report the latency/accuracy frontier.
    Bench(BenchArgs),
    /// Recover integer confusion matrices from rounded metrics.
    Derive(DeriveArgs),
    /// Filter a manifest to one subset.
    Subset(SubsetArgs),
    /// Write a manifest, replay fixtures and a suite realising target matrices.
    FixtureGen(FixtureGenArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Re-render a structured report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ModerateArgs {
    /// Image id in the fixtures, or a file path in live mode.
    #[arg(long)]
    pub image: String,
    /// Replay file, or a fixture directory containing `cascade.jsonl`.
    /// Omit for the live rule-based backends.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Routing config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub regime: Option<modcascade::Regime>,
    #[arg(long)]
    pub tau_low: Option<f64>,
    #[arg(long)]
    pub tau_high: Option<f64>,
    /// Route only on probability; ignore detected text.
    #[arg(long)]
    pub no_text_trigger: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum RegimeSel {
    #[value(alias = "vision-only")]
    VisionOnly,
    Multimodal,
    All,
}

impl RegimeSel {
    fn regimes(self) -> &'static [modcascade::Regime] {
        use modcascade::Regime::*;
        match self {
            RegimeSel::VisionOnly => &[VisionOnly],
            RegimeSel::Multimodal => &[Multimodal],
            RegimeSel::All => &[VisionOnly, Multimodal],
        }
    }
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    /// Suite file, or a fixture directory containing `suite.toml`.
    #[arg(long)]
    pub fixtures: PathBuf,
    /// Manifest overriding the suite's.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub regime: RegimeSel,
    /// Restrict to these models (repeatable).
    #[arg(long = "model")]
    pub models: Vec<String>,
    #[arg(long, default_value = "fake")]
    pub clock: modcascade::evalrunner::ClockMode,
    #[arg(long, default_value_t = modcascade::bench::DEFAULT_WARMUP)]
    pub warmup: usize,
    /// Disable the data-parallel scoring pass.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[arg(long, default_value = "full")]
    pub subset: modcascade::subsets::SubsetKind,
    /// Directory for report.{txt,csv,json} and plot data.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Format printed on stdout.
    #[arg(long, default_value = "table")]
    pub format: modcascade::evalrunner::ReportFormat,
    #[arg(long, default_value_t = modcascade::evalrunner::DEFAULT_GUIDE_PCT)]
    pub guide_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchFormat {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[arg(long, value_enum, default_value = "table")]
    pub format: BenchFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DeriveFormat {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct DeriveArgs {
    /// Unsafe-labelled images.
    #[arg(long)]
    pub pos: u64,
    /// Safe-labelled images.
    #[arg(long)]
    pub neg: u64,
    #[arg(long)]
    pub accuracy: Option<f64>,
    #[arg(long)]
    pub precision: Option<f64>,
    #[arg(long)]
    pub recall: Option<f64>,
    #[arg(long)]
    pub f1: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub decimals: u32,
    #[arg(long, value_enum, default_value = "text")]
    pub format: DeriveFormat,
}

#[derive(Debug, Args)]
pub struct SubsetArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub kind: modcascade::subsets::SubsetKind,
    /// Print class counts as JSON instead of the filtered records.
    #[arg(long)]
    pub counts: bool,
    /// Expected `TOTAL/UNSAFE`; a mismatch exits 1.
    #[arg(long, value_parser = parse_counts)]
    pub expect: Option<modcascade::subsets::ClassCounts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Reference,
}

#[derive(Debug, Args)]
pub struct FixtureGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, conflicts_with_all = ["tp", "fp", "tn", "fn_"])]
    pub preset: Option<Preset>,
    #[arg(long, requires_all = ["fp", "tn", "fn_"])]
    pub tp: Option<u64>,
    #[arg(long)]
    pub fp: Option<u64>,
    #[arg(long)]
    pub tn: Option<u64>,
    #[arg(long = "fn", id = "fn_")]
    pub fn_: Option<u64>,
    /// Text+visual subset as `TOTAL/UNSAFE`.
    #[arg(long, value_parser = parse_counts, default_value = "0/0")]
    pub text_visual: modcascade::subsets::ClassCounts,
    /// Text-only subset as `TOTAL/UNSAFE`.
    #[arg(long, value_parser = parse_counts, default_value = "0/0")]
    pub text_only: modcascade::subsets::ClassCounts,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub listen: Option<String>,
    /// Replay file; omit for the live rule-based backends.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Service config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Structured report written by `eval`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "table")]
    pub format: modcascade::evalrunner::ReportFormat,
    /// Also write plot data into this directory.
    #[arg(long)]
    pub plots: Option<PathBuf>,
    #[arg(long, default_value_t = modcascade::evalrunner::DEFAULT_GUIDE_PCT)]
    pub guide_pct: f64,
}

fn parse_counts(s: &str) -> Result<modcascade::subsets::ClassCounts, String> {
    let (total, unsafe_) = s
        .split_once('/')
        .ok_or_else(|| format!("expected TOTAL/UNSAFE, got `{s}`"))?;
    let total: usize = total.trim().parse().map_err(|e| format!("total: {e}"))?;
    let unsafe_: usize = unsafe_.trim().parse().map_err(|e| format!("unsafe: {e}"))?;
    if unsafe_ > total {
        return Err(format!("unsafe count {unsafe_} exceeds total {total}"));
    }
    Ok(modcascade::subsets::ClassCounts {
        total,
        unsafe_,
        safe: total - unsafe_,
    })
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Reported findings; the details were already written.
    #[error("{0}")]
    Findings(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Output(#[from] std::io::Error),
    #[error(transparent)]
    Suite(#[from] modcascade::evalrunner::SuiteError),
    #[error(transparent)]
    Manifest(#[from] modcascade::subsets::ManifestError),
    #[error(transparent)]
    Replay(#[from] modcascade::adapters::replay::ReplayError),
    #[error(transparent)]
    Pipeline(#[from] modcascade::pipeline::PipelineError),
    #[error(transparent)]
    PipelineConfig(#[from] modcascade::pipeline::PipelineConfigError),
    #[error(transparent)]
    Eval(#[from] modcascade::evalrunner::EvalError),
    #[error(transparent)]
    Fixture(#[from] modcascade::fixtures::FixtureError),
    #[error(transparent)]
    Report(#[from] modcascade::evalrunner::ReportParseError),
    #[error(transparent)]
    ServiceConfig(#[from] modcascade_service::ConfigError),
    #[error(transparent)]
    Serve(#[from] modcascade_service::ServeError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use modcascade::evalrunner::EvalError;
        use modcascade::fixtures::FixtureError;
        match self {
            CliError::Findings(_) => EXIT_FINDINGS,
            CliError::Usage(_)
            | CliError::PipelineConfig(_)
            | CliError::Fixture(FixtureError::Inconsistent(_))
            | CliError::Eval(EvalError::RegimeMismatch { .. } | EvalError::DuplicateModel(_)) => {
                EXIT_USAGE
            }
            _ => EXIT_FAILURE,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match commands::dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                let _ = writeln!(err, "error: {msg}");
            }
            e.exit_code()
        }
    }
}

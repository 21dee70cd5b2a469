//! `drivecot`: annotation, action derivation, reward checks and open-loop
//! evaluation from the command line.
//!
//! Exit codes: 0 success, 1 data error, 2 argument or configuration error,
//! 3 an endpoint stayed unreachable after all retries.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "drivecot", version, about = "Driving reasoning-data toolkit")]
struct Cli {
    /// Log filter (overridden by RUST_LOG).
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Annotate samples with rationales through the filter/feedback loop.
    Annotate(AnnotateArgs),
    /// Label ground-truth trajectories with meta-actions.
    DeriveActions(DeriveArgs),
    /// Open-loop L2 and collision report.
    EvalOpenloop(EvalArgs),
    /// Fréchet distance between two feature sets.
    Fid(FidArgs),
    /// Recompute the policy objective for dumped rollout groups.
    GrpoCheck(GrpoArgs),
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Samples, one JSON object per line.
    #[arg(long)]
    input: PathBuf,
    /// Outcome records, one per input sample, in input order.
    #[arg(long)]
    output: PathBuf,
    /// Samples in flight at once (overrides the config).
    #[arg(long)]
    concurrency: Option<usize>,
    /// Skip malformed input lines instead of stopping.
    #[arg(long)]
    skip_bad: bool,
    /// Seed for retry jitter.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DeriveArgs {
    /// Samples or `{sample_id, trajectory}` records, one per line.
    #[arg(long)]
    input: PathBuf,
    /// Labels, one per line (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use these thresholds instead of fitting on the input.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Write the fitted thresholds here.
    #[arg(long)]
    fit_output: Option<PathBuf>,
    #[arg(long)]
    skip_bad: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConventionArg {
    Stp3,
    Uniad,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predicted `{sample_id, trajectory}` records.
    #[arg(long, alias = "input")]
    pred: PathBuf,
    /// Ground-truth `{sample_id, trajectory}` records.
    #[arg(long)]
    gt: PathBuf,
    /// Obstacle frames per sample; enables the collision columns.
    #[arg(long)]
    obstacles: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    convention: ConventionArg,
    /// Count ST-P3 collisions as the fraction of colliding steps.
    #[arg(long)]
    averaged_collision: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FidArgs {
    /// Binary, `.json` or `.jsonl` feature file.
    #[arg(long)]
    features_a: PathBuf,
    #[arg(long)]
    features_b: PathBuf,
    /// Fall back to diagonal covariances for small sets.
    #[arg(long)]
    diagonal_fallback: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GrpoArgs {
    /// Rollout groups, one per line.
    #[arg(long, alias = "input")]
    groups: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// `RUST_LOG` wins over `level`, which wins over the default `warn`.
pub(crate) fn init_logging(level: Option<&str>) {
    let filter = EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| EnvFilter::new(level.unwrap_or("warn")));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = cli.log_level.as_deref();
    let result = match cli.command {
        Command::Annotate(a) => commands::annotate(a, log),
        Command::DeriveActions(a) => commands::derive_actions(a, log),
        Command::EvalOpenloop(a) => commands::eval_openloop(a, log),
        Command::Fid(a) => commands::fid(a, log),
        Command::GrpoCheck(a) => commands::grpo_check(a, log),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

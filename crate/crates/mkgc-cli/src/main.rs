//! Command-line frontend for multilingual knowledge-graph completion.
//!
//! The engine lives in the `mkgc` library crate; this binary parses
//! flags, assembles configurations, wires dataset directories to the
//! trainer, and formats reports. One command runs per process.
//!
//! Exit codes: 0 success; 2 invalid input data (datasets, checkpoints,
//! text embeddings); 3 numeric failure (non-finite losses or
//! gradients); 4 usage error (flags, config files, and refusals to
//! overwrite completed runs).

mod commands;
mod config;
mod run;

use std::process::ExitCode;

use clap::Parser;

const EXIT_USAGE: u8 = 4;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// A failure plus the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Wrong invocation: flags, config values, output collisions.
    Usage(String),
    /// Engine failure; numeric trouble exits 3, everything else 2.
    Engine(mkgc::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Engine(e) => match e {
                mkgc::Error::Numeric(_) | mkgc::Error::NonFiniteGradient(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Engine(e) => write!(f, "{e}"),
        }
    }
}

impl From<mkgc::Error> for CliError {
    fn from(e: mkgc::Error) -> Self {
        CliError::Engine(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Multilingual knowledge-graph completion over fused language graphs.
#[derive(Parser)]
#[command(name = "mkgc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Generate a synthetic multilingual dataset directory.
    GenerateSynthetic(commands::GenerateArgs),
    /// Train a model and write run artifacts to a directory.
    Train(commands::TrainArgs),
    /// Score a checkpoint on one split with filtered ranking metrics.
    Evaluate(commands::EvaluateArgs),
    /// Propose new cross-language entity pairs from a checkpoint.
    ProposePairs(commands::ProposeArgs),
    /// Summarize cross-language attention mass from a checkpoint.
    AttentionReport(commands::AttentionArgs),
    /// Train every model variant and compare their test metrics.
    Ablate(commands::AblateArgs),
    /// Train across seed-alignment ratios and report the trend.
    SweepAlignment(commands::SweepArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version land here; they are not failures.
            let code = if err.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match init_workers().and_then(|()| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mkgc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::GenerateSynthetic(args) => commands::generate_synthetic_cmd(&args),
        Command::Train(args) => commands::train_cmd(&args),
        Command::Evaluate(args) => commands::evaluate_cmd(&args),
        Command::ProposePairs(args) => commands::propose_pairs_cmd(&args),
        Command::AttentionReport(args) => commands::attention_report_cmd(&args),
        Command::Ablate(args) => commands::ablate_cmd(&args),
        Command::SweepAlignment(args) => commands::sweep_alignment_cmd(&args),
    }
}

/// `MKGC_THREADS` caps the worker pool; unset means all cores.
fn init_workers() -> CliResult<()> {
    let Some(raw) = std::env::var_os("MKGC_THREADS") else {
        return Ok(());
    };
    let raw = raw.to_string_lossy();
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            CliError::usage(format!(
                "MKGC_THREADS must be a positive integer, got {raw:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::usage(format!("worker pool: {e}")))
}

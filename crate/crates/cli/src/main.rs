//! `hierdiff`: config-driven experiments on the step-first denoising engine.
//!
//! Every command writes `resolved-config.json` and its CSV/JSON outputs into
//! `--out`, and prints a short summary. Flags override config keys, which
//! override the built-in defaults.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::InvariantViolation;
use config::{ConfigError, Overrides};

#[derive(Parser)]
#[command(
    name = "hierdiff",
    version,
    about = "Step-first autoregressive denoising experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one grid per seed and score its drift.
    Generate(Common),
    /// Compare context levels: bias propagation and drift per policy.
    AblateTc(Common),
    /// Pass counts, makespans and traces of the pipelined executor.
    PipelineBench(Common),
    /// Mode-seeking study and student dynamics correlation.
    FklStudy(Common),
    /// Drift of the configured policy under an all-block velocity bias.
    Drift(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; omitted keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Context policy: clean-zero, input-level or output-level.
    #[arg(long)]
    policy: Option<String>,
    /// Pipeline worker threads.
    #[arg(long)]
    workers: Option<usize>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<InvariantViolation>() {
            return EXIT_INVARIANT;
        }
        if let Some(e) = cause.downcast_ref::<hierdiff::Error>() {
            return match e {
                hierdiff::Error::InvalidArgument(_) => EXIT_CONFIG,
                hierdiff::Error::Io(_) | hierdiff::Error::Csv(_) | hierdiff::Error::Json(_) => 1,
                _ => EXIT_INVARIANT,
            };
        }
        if let Some(abort) = cause.downcast_ref::<hierdiff::pipeline::PipelineAbort>() {
            return match abort.error {
                hierdiff::Error::InvalidArgument(_) => EXIT_CONFIG,
                _ => EXIT_INVARIANT,
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let (common, f): (_, fn(&config::Resolved) -> anyhow::Result<String>) = match cli.command {
        Command::Generate(c) => (c, commands::generate_cmd),
        Command::AblateTc(c) => (c, commands::ablate_tc_cmd),
        Command::PipelineBench(c) => (c, commands::pipeline_bench_cmd),
        Command::FklStudy(c) => (c, commands::fkl_study_cmd),
        Command::Drift(c) => (c, commands::drift_cmd),
    };
    let overrides = Overrides {
        seed: common.seed,
        out: common.out,
        policy: common.policy,
        workers: common.workers,
    };
    let resolved = config::load(common.config.as_deref(), &overrides)?;
    f(&resolved)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

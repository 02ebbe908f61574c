//! `stc`: one entry point wiring parsing, verification, rewards, advantages,
//! the policy objective, SFT synthesis, evaluation, selection, and the toy
//! trainer. All randomness flows from a single `--seed`; outputs are
//! machine-readable and byte-deterministic given the same inputs and seed.

mod commands;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Jsonl,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    Compact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectMethod {
    Majority,
    Critique,
}

#[derive(Debug, Parser)]
#[command(name = "stc", version, about = "Interleaved reasoning-critique engine")]
pub struct Cli {
    /// Seed for every stochastic output (overrides config-file seeds).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Stdout format for summary output.
    #[arg(long = "output_format", global = true, value_enum, default_value = "json")]
    pub output_format: OutputFormat,

    /// Cap on worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse raw traces into structured trajectories.
    Parse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Rendering attached to each record.
        #[arg(long, value_enum, default_value = "full")]
        mode: ModeArg,
    },
    /// Compare a predicted answer file against a gold answer file.
    Verify {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Compute reward bundles for parsed trajectories.
    Reward {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compute per-token advantage fields for trajectory groups.
    Advantage {
        #[arg(long)]
        input: PathBuf,
        /// JSON config with lambda_* (and optional group_size) keys.
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate the clipped objective and its gradient coefficients.
    Objective {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        logprobs: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the toy policy end to end.
    TrainToy {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory for metrics.jsonl, snapshots, and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate evaluation metrics over sample files.
    Eval {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated list, e.g. pass@1,pass@8,f1,specificity.
        #[arg(long, default_value = "pass@1,pass@8,f1,specificity")]
        metrics: String,
    },
    /// Select one answer per problem from multiple samples.
    Select {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: SelectMethod,
        /// Use only the first K samples per problem.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Synthesize an SFT corpus from traces plus critique annotations.
    SynthSft {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Pre-computed annotations file.
        #[arg(long, group = "provider")]
        annotations: Option<PathBuf>,
        /// External provider command (JSON request on stdin, annotation on
        /// stdout).
        #[arg(long = "provider-cmd", group = "provider")]
        provider_cmd: Option<String>,
        /// Built-in deterministic stub scored against gold intermediates.
        #[arg(long, group = "provider")]
        stub: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore failure if a pool already exists (tests call main twice).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match commands::run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

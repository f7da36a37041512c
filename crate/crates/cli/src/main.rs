//! `mint`: variance diagnostics over embedding dumps, theory sweeps,
//! adaptation runs and the verification suite.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 verification failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Mode;

#[derive(Debug, Parser)]
#[command(
    name = "mint",
    version,
    about = "Variance-collapse diagnostics and pseudo-label variance maximization"
)]
struct Cli {
    /// Worker threads for Monte Carlo sampling (default: available parallelism).
    #[arg(long, global = true, env = "MINT_THREADS")]
    threads: Option<usize>,

    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Total/inter/intra variances of one or more dumps, one CSV row each.
    Diag(DiagArgs),
    /// Closed-form ground-truth variances against Monte Carlo over a severity grid.
    Sweep(SweepArgs),
    /// Run test-time adaptation over a synthetic stream or a dump.
    Adapt(AdaptArgs),
    /// Run the verification suite and print a pass/fail table.
    Verify(VerifyArgs),
    /// Write a synthetic embedding dump at one severity.
    SynthDump(SynthDumpArgs),
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    /// Dump files; the tag is the part of the file stem after `__`.
    #[arg(long = "input", short, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
    /// Require text embeddings and report pseudo-label variances.
    #[arg(long)]
    pub pseudo_text: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// CSV path (default: <output_dir>/sweep.csv).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub severities: Option<Vec<f64>>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Dump to adapt on (implies dump mode).
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub severity: Option<f64>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// One summary row per batch size, all on the same stream.
    #[arg(long, value_delimiter = ',')]
    pub batch_size: Option<Vec<usize>>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub k_prior: Option<f64>,
    /// Weight text refinement by the total sample count instead of per class.
    #[arg(long)]
    pub global_k: bool,
    #[arg(long)]
    pub no_text_adjust: bool,
    #[arg(long)]
    pub no_grad_acc: bool,
    #[arg(long)]
    pub no_mean_acc: bool,
    /// Without the mean accumulator, skip batches whose objective is undefined
    /// instead of aborting.
    #[arg(long)]
    pub skip_undefined: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum LevelArg {
    Quick,
    Full,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value = "quick")]
    pub level: LevelArg,
    /// Also write the table as CSV.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Bias the analytic gradient to confirm the suite can fail.
    #[arg(long, hide = true)]
    pub inject_gradient_fault: bool,
}

#[derive(Debug, Args)]
pub struct SynthDumpArgs {
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long)]
    pub severity: f64,
    #[arg(long, default_value_t = 2000)]
    pub n_samples: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub contamination: Option<f64>,
    #[arg(long)]
    pub no_labels: bool,
    #[arg(long)]
    pub no_text: bool,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Verify(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Verify(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }

    let result = match cli.command {
        Command::Diag(a) => commands::diag(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Adapt(a) => commands::adapt(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::SynthDump(a) => commands::synth_dump(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(e) | Failure::Data(e) => eprintln!("error: {e:#}"),
                Failure::Verify(n) => eprintln!("verification failed: {n} check(s)"),
            }
            ExitCode::from(f.code())
        }
    }
}

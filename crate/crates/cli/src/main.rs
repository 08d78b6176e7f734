#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod eval;
mod generate;
mod simulate;
mod train;

/// Exit status 2.
const USAGE: u8 = 2;
const NUMERICAL: u8 = 3;
const IO: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(hamflow::error::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => USAGE,
            CliError::Lib(e) if e.is_numerical() => NUMERICAL,
            CliError::Lib(e) if e.is_io() => IO,
            CliError::Lib(_) => USAGE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<hamflow::error::Error> for CliError {
    fn from(e: hamflow::error::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

#[derive(Parser)]
#[command(name = "hamflow", version, about = "Hamiltonian dynamics, learned Hamiltonians and Hamiltonian flows")]
struct Cli {
    /// Worker threads for generation and training (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a trajectory dataset.
    Generate(generate::GenerateArgs),
    /// Roll out an analytic system and write states and energies.
    Simulate(simulate::SimulateArgs),
    /// Train a learned Hamiltonian or a density flow.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint and write report files.
    Eval(eval::EvalArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

fn selftest() -> Result<(), CliError> {
    let results = hamflow::selftest::run_all();
    print!("{}", hamflow::selftest::format_table(&results));
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(CliError::Lib(hamflow::error::Error::Numerical {
            step: 0,
            detail: "selftest failed".into(),
        }))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(USAGE);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    let threads = rayon::current_num_threads();
    let result = match cli.command {
        Command::Generate(a) => generate::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Train(a) => train::run(a, threads),
        Command::Eval(a) => eval::run(a),
        Command::Selftest => selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

/// Requires an output directory from flags or config.
pub fn require_out(out: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    out.clone()
        .ok_or_else(|| CliError::Usage("an output directory is required (--out or \"out\" in the config)".into()))
}

//! `slfa` — structured latent factor analysis from the command line.
//!
//! Subcommands: `check` (design identifiability), `fit` (constrained joint
//! MLE on user data), `study` (simulation studies from a JSON config), and
//! `eval` (recovery metrics between two score files).
//!
//! Exit codes: 0 success, 1 input error, 2 design not identifiable,
//! 3 fit divergence.

mod commands;
mod manifest;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_IDENTIFIABLE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// A command failure carrying the process exit code.
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::input(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "slfa",
    version,
    about = "Structured latent factor analysis: design checking, fitting, studies, metrics"
)]
struct Cli {
    /// Worker threads (falls back to SLFA_THREADS, then all cores).
    /// Results never depend on the thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check structural identifiability of a design matrix CSV.
    Check(commands::CheckArgs),
    /// Fit the constrained joint maximum-likelihood estimator to data.
    Fit(commands::FitArgs),
    /// Run a simulation study from a JSON configuration.
    Study(commands::StudyArgs),
    /// Compute recovery metrics between true and estimated score files.
    Eval(commands::EvalArgs),
}

fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("SLFA_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .filter(|&t| t > 0)
    .unwrap_or_else(num_threads_default)
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors; anything else is bad input.
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            eprintln!("{e}");
            std::process::exit(EXIT_INPUT);
        }
    };
    let threads = resolve_threads(cli.threads);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot build thread pool: {e}");
            std::process::exit(EXIT_INPUT);
        }
    };
    let outcome = pool.install(|| match cli.command {
        Command::Check(args) => commands::check(args, threads),
        Command::Fit(args) => commands::fit(args, threads),
        Command::Study(args) => commands::study(args, threads),
        Command::Eval(args) => commands::eval(args, threads),
    });
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            std::process::exit(failure.code);
        }
    }
}

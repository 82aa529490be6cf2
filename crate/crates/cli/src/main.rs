//! `koopman-certify`: fit bilinear generator surrogates from sampled data,
//! propagate observables, certify state constraints with tightened margins,
//! and run the convergence sweeps. Exit codes: 0 success (certificate
//! issued, for `certify`), 1 certificate rejected, 2 bad usage or config,
//! 3 numerical failure.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod svg;

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// A command failure carrying the process exit code.
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<koopman_core::Error> for Failure {
    fn from(e: koopman_core::Error) -> Self {
        Self {
            code: if e.is_usage() { EXIT_USAGE } else { EXIT_NUMERICAL },
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "koopman-certify",
    version,
    about = "Bilinear generator surrogates from data: fit, predict, certify, sweep"
)]
struct Cli {
    /// Worker threads for the data-parallel runs (falls back to the
    /// KOOPMAN_CERTIFY_THREADS environment variable, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the generator matrices and write them with a manifest
    Fit {
        /// JSON run configuration
        #[arg(long)]
        config: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Propagate the configured observable and compare against ground truth
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the discrete eDMDc baseline even when the config defines one
        #[arg(long)]
        no_edmdc: bool,
    },
    /// Fit, evaluate the tightened constraints, and write a certificate
    Certify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the sweep defined in the config (generator, trajectory, or mesh refinement)
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse cells already present in the output rows CSV (generator sweep only)
        #[arg(long)]
        resume: bool,
    },
    /// Saddle benchmark: bilinear surrogate vs the eDMDc baseline over 20 data seeds
    DuffingBench {
        #[arg(long)]
        out: PathBuf,
        /// Seed of the bounded piecewise-constant control realization
        #[arg(long, default_value_t = 148)]
        control_seed: u64,
        /// Skip the eDMDc baseline
        #[arg(long)]
        no_edmdc: bool,
    },
}

fn init_threads(flag: Option<usize>) -> Result<(), Failure> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("KOOPMAN_CERTIFY_THREADS") {
            Ok(s) => Some(s.parse::<usize>().map_err(|_| {
                Failure::usage(format!(
                    "KOOPMAN_CERTIFY_THREADS must be a positive integer, got '{s}'"
                ))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Failure::usage("thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure {
                code: EXIT_NUMERICAL,
                message: format!("thread pool initialization failed: {e}"),
            })?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32, Failure> {
    init_threads(cli.threads)?;
    match cli.cmd {
        Cmd::Fit { config, out } => commands::fit(&config, &out),
        Cmd::Predict {
            config,
            out,
            no_edmdc,
        } => commands::predict(&config, &out, no_edmdc),
        Cmd::Certify { config, out } => commands::run_certify(&config, &out),
        Cmd::Sweep {
            config,
            out,
            resume,
        } => commands::sweep(&config, &out, resume),
        Cmd::DuffingBench {
            out,
            control_seed,
            no_edmdc,
        } => commands::duffing_bench(&out, control_seed, no_edmdc),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    std::process::exit(code);
}

//! `reflectsim` command-line scenario runner.
//!
//! Exit codes: 0 when every requested check passes, 1 on a failed check or a
//! solver error, 2 on usage or config errors. `summary.json` is written to the
//! output directory in every case.

mod commands;
mod config;
mod summary;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::summary::{Failure, Summary};

const DEFAULT_OUT: &str = "reflectsim-out";

#[derive(Parser, Debug)]
#[command(name = "reflectsim", version, about = "Confined particle dynamics with elastic wall collisions")]
struct Cli {
    /// Scenario config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for sampled diagnostics; overrides `[validate] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress the summary on standard output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the exact and/or penalty solver with the configured analyses.
    Simulate,
    /// Penalty runs for every `run.ks` against the exact reference.
    PenaltySweep,
    /// Certify the half-line non-uniqueness construction.
    Counterexample {
        #[arg(long = "L", default_value_t = 2)]
        l: u32,
        #[arg(long = "n-max", default_value_t = 10)]
        n_max: usize,
        /// Rows in counterexample.csv.
        #[arg(long, default_value_t = 2001)]
        samples: usize,
    },
    /// Check geometry, force Lipschitz bound and initial state without simulating.
    Validate,
    /// Distance between two trajectory CSV files.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// `sup_pos` or `l1_vel`.
        #[arg(long, default_value = "sup_pos")]
        norm: String,
        /// Fail when the distance exceeds this value.
        #[arg(long)]
        tol: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::PenaltySweep => "penalty-sweep",
            Command::Counterexample { .. } => "counterexample",
            Command::Validate => "validate",
            Command::Compare { .. } => "compare",
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("REFLECTSIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Usage(format!("REFLECTSIM_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot size the worker pool: {e}")))
}

fn dispatch(cli: &Cli, out: &mut PathBuf, summary: &mut Summary) -> Result<(), Failure> {
    configure_threads()?;
    let opts = commands::Options {
        seed: cli.seed,
        out_override: cli.out.is_some(),
    };
    match &cli.command {
        Command::Counterexample { l, n_max, samples } => commands::counterexample(*l, *n_max, *samples, out, summary),
        Command::Compare { a, b, norm, tol } => commands::compare(a, b, norm, *tol, out, summary),
        Command::Simulate | Command::PenaltySweep | Command::Validate => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| Failure::Usage(format!("{} requires --config", cli.command.name())))?;
            match &cli.command {
                Command::Simulate => commands::simulate(path, &opts, out, summary),
                Command::PenaltySweep => commands::penalty_sweep(path, &opts, out, summary),
                _ => commands::validate(path, &opts, out, summary),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let mut summary = Summary::new(cli.command.name());
    let result = dispatch(&cli, &mut out, &mut summary);
    let code = summary.finish(result);
    if let Err(e) = summary.write(&out) {
        eprintln!("reflectsim: cannot write summary.json to {}: {e}", out.display());
    }
    if !cli.quiet {
        summary.print(&out);
    }
    if let Some(err) = &summary.error {
        eprintln!("reflectsim: {}: {}", err.kind, err.message);
    }
    ExitCode::from(code)
}

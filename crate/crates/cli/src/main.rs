//! `mgw`: validate laws, sample tilted trees, and run the exact checks.
//!
//! stdout carries JSON or CSV only; diagnostics go to stderr. Exit codes:
//! 0 success, 1 a verification did not pass, 2 usage or input error.

mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Assumed, Command, Measure, Quantity, RunConfig};
use run::Failure;

/// Thread count for batch sampling; defaults to the number of cores.
const THREADS_ENV: &str = "MGW_THREADS";

#[derive(Parser)]
#[command(name = "mgw", version, about = "Marked Galton-Watson trees and their penalization martingales")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Save the resolved run configuration (seed included) as JSON.
    #[arg(long, global = true, value_name = "FILE")]
    save_config: Option<PathBuf>,
}

#[derive(Args)]
struct LawArg {
    /// Law file: {"p": {"0": "3/5", "2": "2/5"}, "q": {...}, "q_default": ...}
    #[arg(long, value_name = "FILE")]
    law: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a law file and print μ, r and r̃.
    Validate {
        #[command(flatten)]
        law: LawArg,
    },
    /// Draw truncated trees under the base or a tilted measure.
    Sample {
        #[command(flatten)]
        law: LawArg,
        #[arg(long, value_enum)]
        measure: Measure,
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate E[M_p^ℓ] against its limit or growth rate, as CSV.
    Moments {
        #[command(flatten)]
        law: LawArg,
        #[arg(long)]
        ell: usize,
        #[arg(long)]
        p_max: u32,
        /// Print exact rational moments.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fixed point κ(s) of f_s and f_s'(κ), or κ̃ and ψ'(κ̃) with --zero-mark.
    Kappa {
        #[command(flatten)]
        law: LawArg,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        zero_mark: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact martingale and change-of-measure checks; JSON report.
    Verify {
        #[command(flatten)]
        law: LawArg,
        /// poly-sub, poly-crit, poly-super, expo-positive, expo-rary, expo-zero, expo-zero-rary
        #[arg(long)]
        regime: String,
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        depth: usize,
        /// Use rational arithmetic where the weights are rational.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convergence table (CSV) and verdict (JSON) for a growth lemma.
    Asymptotics {
        #[command(flatten)]
        law: LawArg,
        #[arg(long, value_enum, default_value = "moments")]
        quantity: Quantity,
        /// Normalize as if the law had this criticality (negative control).
        #[arg(long, value_enum)]
        assume: Option<Assumed>,
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        p_max: u32,
        /// CSV destination; the verdict then goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Verdict destination.
        #[arg(long)]
        verdict: Option<PathBuf>,
        /// Exit 1 unless the verdict is "stabilized".
        #[arg(long)]
        require_stable: bool,
    },
    /// Re-run a configuration saved with --save-config.
    Replay {
        #[arg(value_name = "CONFIG")]
        config: PathBuf,
    },
}

fn lower(cmd: Cmd) -> Result<RunConfig, Failure> {
    Ok(match cmd {
        Cmd::Validate { law } => RunConfig::new(Command::Validate, law.law),
        Cmd::Sample { law, measure, ell, s, depth, count, seed, out } => RunConfig {
            measure: Some(measure),
            ell,
            s,
            depth: Some(depth),
            count: Some(count),
            seed,
            out,
            ..RunConfig::new(Command::Sample, law.law)
        },
        Cmd::Moments { law, ell, p_max, exact, out } => RunConfig {
            ell: Some(ell),
            p_max: Some(p_max),
            exact,
            out,
            ..RunConfig::new(Command::Moments, law.law)
        },
        Cmd::Kappa { law, s, zero_mark, out } => RunConfig { s, zero_mark, out, ..RunConfig::new(Command::Kappa, law.law) },
        Cmd::Verify { law, regime, ell, s, depth, exact, out } => RunConfig {
            regime: Some(regime),
            ell,
            s,
            depth: Some(depth),
            exact,
            out,
            ..RunConfig::new(Command::Verify, law.law)
        },
        Cmd::Asymptotics { law, quantity, assume, ell, s, t, p_max, out, verdict, require_stable } => RunConfig {
            quantity: Some(quantity),
            assume,
            ell,
            s,
            t,
            p_max: Some(p_max),
            out,
            verdict,
            require_stable,
            ..RunConfig::new(Command::Asymptotics, law.law)
        },
        Cmd::Replay { config } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", config.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("bad config {}: {e}", config.display())))?
        }
    })
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    let mut cfg = lower(cli.cmd)?;
    cfg.validate().map_err(Failure::Usage)?;
    run::resolve_seed(&mut cfg);
    if let Some(path) = &cli.save_config {
        let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
        output::write_atomic(path, &format!("{text}\n"))?;
    }
    run::run(&cfg)
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors by itself
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

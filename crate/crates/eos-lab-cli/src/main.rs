//! `eos-lab` command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 numerical window or
//! truncation failure, 3 oracle envelope refusal, 4 oracle-check budget failure.

mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::{Config, ConfigError};
use crate::output::RunDir;

#[derive(Parser, Debug)]
#[command(name = "eos-lab", version, about = "Electro-optic sampling statistics and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration; defaults apply to anything left out.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory; must not exist or be empty.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Count distributions over the outcome window.
    CountDist(Common),
    /// Ordering parameter s̃(ζ) and the post-measurement map s → s′.
    SCurves(Common),
    /// Post-measurement Wigner function for the first configured outcome.
    PostState {
        #[command(flatten)]
        common: Common,
        /// Points per axis of the phase-space grid.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Consecutive measurements over all configured outcomes.
    Chain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Monte-Carlo average reconstruction fidelity against ζ.
    FidelitySweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Compares the truncated-Fock oracle with the exact count route.
    OracleCheck(Common),
    /// Prints the resolved configuration as TOML.
    ShowConfig {
        #[arg(long, short)]
        config: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 1;
    }
    match err.chain().find_map(|e| e.downcast_ref::<eos_lab::Error>()) {
        Some(
            eos_lab::Error::WindowTooSmall { .. }
            | eos_lab::Error::RegridLoss(_)
            | eos_lab::Error::TruncationOverflow(_)
            | eos_lab::Error::TruncationBreach { .. },
        ) => 2,
        Some(eos_lab::Error::EnvelopeRefusal(_)) => 3,
        _ => 1,
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("EOS_LAB_THREADS") {
        let n: usize = v.parse().map_err(|_| ConfigError(format!("EOS_LAB_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Runs the command; `Ok(false)` means the run completed but a budget check failed.
fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    if let Command::ShowConfig { config } = &cli.command {
        print!("{}", Config::load(config.as_deref())?.to_toml());
        return Ok(true);
    }
    let (name, common) = match &cli.command {
        Command::CountDist(c) => ("count-dist", c),
        Command::SCurves(c) => ("s-curves", c),
        Command::PostState { common, .. } => ("post-state", common),
        Command::Chain { common, .. } => ("chain", common),
        Command::FidelitySweep { common, .. } => ("fidelity-sweep", common),
        Command::OracleCheck(c) => ("oracle-check", c),
        Command::ShowConfig { .. } => unreachable!("handled above"),
    };
    let mut cfg = Config::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::PostState { grid: Some(g), .. } | Command::Chain { grid: Some(g), .. } => cfg.post_state.grid = *g,
        Command::FidelitySweep { samples: Some(n), .. } => cfg.fidelity.samples = *n,
        _ => {}
    }
    let mut out = RunDir::create(&common.out, name, &cfg)?;
    let result = match &cli.command {
        Command::CountDist(_) => commands::count_dist(&cfg, &mut out).map(|_| true),
        Command::SCurves(_) => commands::s_curves(&cfg, &mut out).map(|_| true),
        Command::PostState { .. } => commands::post_state(&cfg, &mut out).map(|_| true),
        Command::Chain { .. } => commands::chain_cmd(&cfg, &mut out).map(|_| true),
        Command::FidelitySweep { .. } => commands::fidelity_sweep(&cfg, &mut out).map(|_| true),
        Command::OracleCheck(_) => commands::oracle_check(&cfg, &mut out).map(|r| r.passed),
        Command::ShowConfig { .. } => unreachable!("handled above"),
    };
    match result {
        Ok(passed) => {
            let n = out.files().len();
            let dir = out.finish()?;
            eprintln!("wrote {n} files to {}", dir.display());
            Ok(passed)
        }
        Err(e) => {
            out.abandon();
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: oracle check exceeded its budget (see oracle_checks.csv)");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

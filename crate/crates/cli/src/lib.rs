//! Command-line front end for the federated multi-label simulator.
//!
//! Verbs: `run` (one experiment), `ablate` (cumulative component sweep),
//! `masksweep` (FedAvg vs FedMLP across missing-class counts) and `fixtures`
//! (reference inputs/outputs as JSON). Exit codes: 0 success, 2 configuration
//! or I/O error, 3 numerical failure, 1 internal error.

pub mod commands;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_ablate, cmd_masksweep, cmd_run, Invocation};
use crate::config::load_config;
use crate::error::{CliError, Result};

/// Environment variable that replaces the default output directory.
pub const OUT_DIR_ENV: &str = "FEDMLP_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "fedmlp", version, about = "Federated multi-label learning with partial annotations")]
pub struct Cli {
    /// Worker threads for client updates (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML config file or a previous run's manifest.toml.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Dotted override, e.g. `protocol.rounds=50`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,

    /// Output directory (default: $FEDMLP_OUT_DIR, else ./runs/<command>).
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment.
    Run(Common),
    /// Run the five cumulative component sets.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Consecutive seeds averaged per row, starting at the configured seed.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
    },
    /// Compare FedAvg and FedMLP across missing-class counts.
    Masksweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated missing-class counts (default: 1..C-1).
        #[arg(long, value_delimiter = ',')]
        missing: Vec<usize>,
    },
    /// Write reference fixtures.
    Fixtures {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(flag: Option<PathBuf>, command: &str) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(command))
}

fn dispatch(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    let inv = |command: &'static str, args: BTreeMap<String, String>| Invocation { command, threads, args };
    match cli.command {
        Command::Run(c) => {
            let cfg = load_config(c.config.as_deref(), &c.sets, c.seed)?;
            let out = out_dir(c.out, "run");
            cmd_run(&cfg, &out, &inv("run", BTreeMap::new()))?;
            tracing::info!(out = %out.display(), "run complete");
        }
        Command::Ablate { common: c, seeds } => {
            let cfg = load_config(c.config.as_deref(), &c.sets, c.seed)?;
            let out = out_dir(c.out, "ablate");
            let args = BTreeMap::from([("seeds".to_string(), seeds.to_string())]);
            cmd_ablate(&cfg, seeds, &out, &inv("ablate", args))?;
            tracing::info!(out = %out.display(), "ablation complete");
        }
        Command::Masksweep { common: c, missing } => {
            let cfg = load_config(c.config.as_deref(), &c.sets, c.seed)?;
            let out = out_dir(c.out, "masksweep");
            let list: Vec<String> = missing.iter().map(ToString::to_string).collect();
            let args = BTreeMap::from([("missing".to_string(), list.join(","))]);
            cmd_masksweep(&cfg, &missing, &out, &inv("masksweep", args))?;
            tracing::info!(out = %out.display(), "sweep complete");
        }
        Command::Fixtures { out } => {
            let out = out_dir(out, "fixtures");
            let files = fixtures::cmd_fixtures(&out)?;
            tracing::info!(count = files.len(), out = %out.display(), "fixtures written");
        }
    }
    Ok(())
}

/// Parse arguments, run the command and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.quiet { tracing::Level::WARN } else { tracing::Level::INFO };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .with_target(false)
        .try_init();
    let result = match cli.threads {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| dispatch(cli))),
        None => dispatch(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

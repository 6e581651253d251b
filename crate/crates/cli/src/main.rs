//! `cluster-gas <command> <config.toml> [--set key=value]... [--workers N]`
//!
//! Exit status: 0 success, 2 invalid input, 3 numerical failure, 64 usage.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cluster_gas::io::to_json_pretty;
use cluster_gas::stats::Exec;
use cluster_gas::Error;
use serde::Serialize;

use commands::{Run, COMMANDS};
use config::Config;

const EXIT_INVALID: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "cluster-gas",
    version,
    about = "Ideal-mixture approximation of dilute classical gases",
    after_help = "Commands: potential-check, groundstate, partfun, ideal-solve, ideal-sweep-saha, \
                  sim-canonical, sim-partition, compare.\nConfiguration keys are described in docs/config.md."
)]
struct Cli {
    /// Command to run.
    command: String,
    /// TOML configuration file.
    config: PathBuf,
    /// Override a configuration value, e.g. `--set beta=2.0` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads; falls back to CLUSTER_GAS_WORKERS, then 1.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    status: String,
    exit_code: u8,
    config_hash: String,
    config: String,
    seed: Option<u64>,
    versions: Versions,
    outputs: &'a [String],
}

#[derive(Serialize)]
struct Versions {
    cluster_gas: &'static str,
    cluster_gas_cli: &'static str,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numerical(_) | Error::AmbiguousPhase { .. } => EXIT_NUMERICAL,
        Error::Domain(_) | Error::Invalid(_) | Error::Io { .. } | Error::Parse { .. } => EXIT_INVALID,
    }
}

fn workers(flag: Option<usize>) -> Result<usize, String> {
    if let Some(w) = flag {
        return Ok(w.max(1));
    }
    match std::env::var("CLUSTER_GAS_WORKERS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(|w| w.max(1))
            .map_err(|_| format!("CLUSTER_GAS_WORKERS must be a positive integer, got '{v}'")),
        Err(_) => Ok(1),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    if !COMMANDS.contains(&cli.command.as_str()) {
        eprintln!(
            "error: unknown command '{}'\n\nUsage: cluster-gas <COMMAND> <CONFIG> [--set KEY=VALUE]... [--workers N]\nCommands: {}",
            cli.command,
            COMMANDS.join(", ")
        );
        return ExitCode::from(EXIT_USAGE);
    }
    let workers = match workers(cli.workers) {
        Ok(w) => w,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cfg = match Config::load(&cli.config, &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let mut run = match Run::new(&cfg, Exec::new(workers)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let outcome = run.dispatch(&cli.command);
    let (status, code) = match &outcome {
        Ok(()) => ("ok".to_string(), 0),
        Err(e) => (e.to_string(), exit_code(e)),
    };
    if let Err(e) = &outcome {
        eprintln!("error: {e}");
    }
    if !run.outputs.is_empty() {
        let manifest = Manifest {
            command: &cli.command,
            status,
            exit_code: code,
            config_hash: cfg.hash(),
            config: cfg.canonical(),
            seed: run.seed,
            versions: Versions {
                cluster_gas: cluster_gas::VERSION,
                cluster_gas_cli: env!("CARGO_PKG_VERSION"),
            },
            outputs: &run.outputs,
        };
        let written = to_json_pretty(&manifest)
            .and_then(|text| cluster_gas::io::write_text(&run.out_dir.join("manifest.json"), &text));
        if let Err(e) = written {
            eprintln!("error: cannot write manifest: {e}");
            return ExitCode::from(exit_code(&e).max(code));
        }
    }
    ExitCode::from(code)
}

//! `sme`: command-line front end for synthetic monitoring environments.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 a
//! verification check failed.

mod args;
mod commands;
mod svg;

use std::fmt;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;
use sme_core::codec::{fnv1a64, format_checksum};
use sme_core::error::Error as CoreError;

use args::{Cli, Command};
use commands::Outcome;

pub const THREADS_VAR: &str = "SME_THREADS";

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn context(self, what: &str) -> Self {
        match self {
            Failure::Validation(m) => Failure::Validation(format!("{what}: {m}")),
            Failure::Runtime(m) => Failure::Runtime(format!("{what}: {m}")),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "invalid input: {m}"),
            Failure::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidConfig { .. }
            | CoreError::DimensionMismatch { .. }
            | CoreError::VersionMismatch { .. }
            | CoreError::ChecksumMismatch { .. }
            | CoreError::Manifest(_)
            | CoreError::BadMagic(_)
            | CoreError::Truncated { .. }
            | CoreError::Layout(_)
            | CoreError::InvalidArgument(_)
            | CoreError::Json(_) => Failure::Validation(e.to_string()),
            CoreError::NonFinite(_)
            | CoreError::NoEpisode
            | CoreError::EpisodeFinished
            | CoreError::SamplingExhausted { .. }
            | CoreError::Callback { .. }
            | CoreError::Io(_) => Failure::Runtime(e.to_string()),
        }
    }
}

fn configure_threads() -> Result<Option<usize>, Failure> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Failure::Validation(format!("{THREADS_VAR} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(format!("configuring thread pool: {e}")))?;
    Ok(Some(n))
}

fn write_run_log(cli: &Cli, outcome: &Outcome, threads: Option<usize>) -> Result<(), Failure> {
    let outputs = outcome
        .outputs
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| Failure::Runtime(format!("reading {}: {e}", p.display())))?;
            Ok(json!({ "path": p, "bytes": bytes.len(), "fnv1a64": format_checksum(fnv1a64(&bytes)) }))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let log = json!({
        "tool": "sme",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": sme_core::VERSION,
        "formats": {
            "config": sme_core::config::CONFIG_FORMAT_VERSION,
            "manifest": sme_core::env::MANIFEST_FORMAT_VERSION,
            "dataset": sme_core::offline::DATASET_FORMAT_VERSION,
        },
        "argv": std::env::args().skip(1).collect::<Vec<_>>(),
        "flags": &cli.command,
        "seeds": &outcome.seeds,
        "threads_cap": threads,
        "outputs": outputs,
    });
    let path = cli.run_log.clone().unwrap_or_else(|| outcome.run_log.clone());
    let mut text = serde_json::to_string_pretty(&log).expect("run log serializes");
    text.push('\n');
    sme_core::fileio::write_atomic(&path, text.as_bytes())
        .map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display())))
}

fn run(cli: &Cli) -> Result<Outcome, Failure> {
    match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::Eval(a) => commands::eval(a),
        Command::Dataset(a) => commands::dataset(a),
        Command::Concat(a) => commands::concat(a),
        Command::Verify(a) => commands::verify_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = configure_threads().and_then(|threads| {
        let outcome = run(&cli)?;
        write_run_log(&cli, &outcome, threads)?;
        Ok(outcome)
    });
    match result {
        Ok(outcome) if outcome.failed_checks > 0 => {
            eprintln!("error: {} verification check(s) failed", outcome.failed_checks);
            ExitCode::from(3)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! Subcommand implementations for the `teduchain` binary. Each command writes
//! its human-readable output to the given writer and returns the process exit
//! code.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use teduchain_core::ledger::{parse_ledger_prefix, verify_ledger_bytes, VerificationReport};
use teduchain_core::sim::{generate_scenario, run_simulation, GenParams, Scenario, ScenarioError, SimError};
use teduchain_core::store::StoreError;

/// Exit code for a check that ran and failed.
pub const EXIT_FAILED: i32 = 1;
/// Exit code for unreadable inputs and other usage errors.
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("block index {index} out of range (ledger has {len} blocks)")]
    IndexOutOfRange { index: u64, len: usize },
    #[error("ledger is malformed at index {}: {}", .0.first_bad_index.unwrap_or_default(), .0.reason)]
    Malformed(VerificationReport),
    #[error("{path}: {source}")]
    Scenario { path: PathBuf, source: ScenarioError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::IndexOutOfRange { .. } | CliError::Malformed(_) => EXIT_FAILED,
            CliError::Sim(SimError::NonQuiescent(_)) => EXIT_FAILED,
            _ => EXIT_ERROR,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::parse(&text).map_err(|source| CliError::Scenario {
        path: path.to_path_buf(),
        source,
    })
}

fn report_error(err: &CliError, err_out: &mut impl Write) -> i32 {
    let _ = writeln!(err_out, "error: {err}");
    err.exit_code()
}

/// `teduchain verify`: prints `valid`, or the first bad index and reason.
pub fn cmd_verify(ledger: &Path, out: &mut impl Write, err_out: &mut impl Write) -> i32 {
    let bytes = match read(ledger) {
        Ok(b) => b,
        Err(e) => return report_error(&e, err_out),
    };
    match verify_ledger_bytes(&bytes) {
        Ok(chain) => {
            let _ = writeln!(out, "valid ({} blocks, tip {})", chain.len(), chain.tip().hash);
            0
        }
        Err(report) => {
            let _ = writeln!(
                out,
                "invalid: first_bad_index={} reason={}",
                report.first_bad_index.unwrap_or_default(),
                report.reason
            );
            EXIT_FAILED
        }
    }
}

/// `teduchain inspect`: prints one block as its ledger-file JSON line.
pub fn cmd_inspect(ledger: &Path, index: u64, out: &mut impl Write, err_out: &mut impl Write) -> i32 {
    match inspect(ledger, index) {
        Ok(line) => {
            let _ = writeln!(out, "{line}");
            0
        }
        Err(e) => report_error(&e, err_out),
    }
}

pub fn inspect(ledger: &Path, index: u64) -> Result<String, CliError> {
    let bytes = read(ledger)?;
    let (blocks, failure) = parse_ledger_prefix(&bytes);
    match blocks.get(index as usize) {
        Some(block) => Ok(block.to_line()),
        None => match failure {
            Some(report) => Err(CliError::Malformed(report)),
            None => Err(CliError::IndexOutOfRange {
                index,
                len: blocks.len(),
            }),
        },
    }
}

/// `teduchain sim`: runs a scenario and writes ledgers plus `report.json`.
/// Exits 1 if any post-run check failed.
pub fn cmd_sim(scenario: &Path, seed: u64, out_dir: &Path, out: &mut impl Write, err_out: &mut impl Write) -> i32 {
    let result = load_scenario(scenario).and_then(|s| {
        let outcome = run_simulation(&s, seed)?;
        outcome.write_to(out_dir)?;
        Ok(outcome)
    });
    match result {
        Ok(outcome) => {
            let r = &outcome.report;
            let _ = writeln!(
                out,
                "nodes={} funded={} messages={} converged={} safety={} conservation={} contracts={} replay={}",
                r.nodes.len(),
                r.funded_students.len(),
                r.messages_delivered,
                r.converged,
                r.safety.passed,
                r.conservation.passed,
                r.contract_exactness.passed,
                r.replay_equivalence.passed,
            );
            if r.all_passed() {
                0
            } else {
                EXIT_FAILED
            }
        }
        Err(e) => report_error(&e, err_out),
    }
}

/// `teduchain generate`: writes a random scenario file.
pub fn cmd_generate(params: GenParams, seed: u64, path: &Path, err_out: &mut impl Write) -> i32 {
    let text = generate_scenario(params, seed).to_json();
    match std::fs::write(path, text) {
        Ok(()) => 0,
        Err(source) => report_error(
            &CliError::Io {
                path: path.to_path_buf(),
                source,
            },
            err_out,
        ),
    }
}

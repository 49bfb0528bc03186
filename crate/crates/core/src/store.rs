//! On-disk formats: the ledger file, the pledge event log, the registry file
//! and the outbox of contract documents.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::canonical;
use crate::document::ContractDocument;
use crate::funding::FundingEvent;
use crate::ledger::{encode_ledger, verify_ledger_bytes, Chain};
use crate::registry::{Registry, RegistryError};

pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const PLEDGE_LOG_FILE: &str = "pledges.jsonl";
pub const REGISTRY_FILE: &str = "registry.json";
pub const OUTBOX_DIR: &str = "outbox";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt ledger at index {first_bad_index}: {reason}")]
    CorruptLedger { first_bad_index: u64, reason: String },
    #[error("corrupt pledge log at line {line}: {reason}")]
    CorruptPledgeLog { line: usize, reason: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn persist_chain(chain: &Chain, path: &Path) -> Result<(), StoreError> {
    write_atomic(path, &encode_ledger(chain.blocks()))
}

/// Loads and verifies a ledger file.
pub fn load_chain(path: &Path) -> Result<Chain, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    verify_ledger_bytes(&bytes).map_err(|report| StoreError::CorruptLedger {
        first_bad_index: report.first_bad_index.unwrap_or_default(),
        reason: report.reason,
    })
}

/// Loads a chain, or starts from genesis if the file does not exist yet.
pub fn load_chain_or_genesis(path: &Path) -> Result<Chain, StoreError> {
    if path.exists() {
        load_chain(path)
    } else {
        Ok(Chain::new())
    }
}

pub fn encode_pledge_event(event: &FundingEvent) -> String {
    canonical::to_canonical_string(event).expect("events contain no floats")
}

pub fn append_pledge_events(path: &Path, events: &[FundingEvent]) -> Result<(), StoreError> {
    if events.is_empty() {
        return Ok(());
    }
    let mut out = String::new();
    for e in events {
        out.push_str(&encode_pledge_event(e));
        out.push('\n');
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    file.write_all(out.as_bytes()).map_err(io_err(path))?;
    file.sync_data().map_err(io_err(path))
}

pub fn write_pledge_log(path: &Path, events: &[FundingEvent]) -> Result<(), StoreError> {
    let mut out = String::new();
    for e in events {
        out.push_str(&encode_pledge_event(e));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a pledge log. A missing file is an empty log.
pub fn load_pledge_log(path: &Path) -> Result<Vec<FundingEvent>, StoreError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::CorruptPledgeLog {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn save_registry(registry: &Registry, path: &Path) -> Result<(), StoreError> {
    write_atomic(path, &registry.to_bytes())
}

pub fn load_registry(path: &Path) -> Result<Option<Registry>, StoreError> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(Registry::from_bytes(&bytes)?)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// Writes `<student_id>.contract.json` into the outbox, returning its path.
pub fn write_document(outbox: &Path, document: &ContractDocument) -> Result<PathBuf, StoreError> {
    fs::create_dir_all(outbox).map_err(io_err(outbox))?;
    let path = outbox.join(document.file_name());
    let mut file = File::create(&path).map_err(io_err(&path))?;
    file.write_all(&document.bytes).map_err(io_err(&path))?;
    Ok(path)
}

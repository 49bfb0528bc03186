//! Contract ledger: blocks, the hash chain, verification and amendments.

mod block;
mod chain;
mod terms;

use thiserror::Error;

pub use block::{
    canonical_encode, compute_block_hash, make_genesis, AmendmentPayload, Block, BlockKind,
    BlockRecord, BlockRef, ContractPayload, GenesisPayload, Payload, GENESIS_MINER, GENESIS_TAG,
};
pub use chain::{verify_chain, Chain, ContractView, VerificationReport};
pub use terms::{Cents, ContactInfo, ContractTerms, InvestorShare};

use crate::canonical::EncodingError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("malformed block: {0}")]
    Malformed(String),
    #[error("student {0} already has a contract block")]
    DuplicateStudentContract(String),
    #[error("invalid contract terms: {0}")]
    InvalidTerms(String),
    #[error("contract terms are immutable; amendments may only change contact details")]
    TermsImmutable,
    #[error("amendment reference {0:?} does not resolve to a contract or amendment block")]
    UnknownReference(BlockRef),
    #[error("{0} is not a party to the amended contract")]
    UnknownParty(String),
    #[error("amendment carries no contact updates")]
    EmptyAmendment,
    #[error("no contract block for student {0}")]
    NotFound(String),
    #[error("block rejected at index {}: {}", .0.first_bad_index.unwrap_or_default(), .0.reason)]
    Rejected(VerificationReport),
}

/// Renders blocks in ledger-file form: one canonical JSON object per line,
/// each line terminated by `\n`.
pub fn encode_ledger(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    for block in blocks {
        out.extend_from_slice(block.to_line().as_bytes());
        out.push(b'\n');
    }
    out
}

/// Parses and verifies ledger-file bytes. Lines that fail to parse count as
/// failures at their own index, so the report always names the smallest index
/// at which the file stops being a valid chain.
pub fn verify_ledger_bytes(bytes: &[u8]) -> Result<Chain, VerificationReport> {
    let (blocks, parse_failure) = parse_ledger_prefix(bytes);
    let chain = Chain::from_blocks(blocks)?;
    match parse_failure {
        Some(report) => Err(report),
        None => Ok(chain),
    }
}

/// Parses lines until the first unparseable one. Returns the parsed prefix and
/// a report for the failing line, if any. No chain rules are checked.
pub fn parse_ledger_prefix(bytes: &[u8]) -> (Vec<Block>, Option<VerificationReport>) {
    let mut blocks = Vec::new();
    if bytes.is_empty() {
        return (blocks, Some(VerificationReport::bad(0, "empty ledger")));
    }
    let body = match bytes.strip_suffix(b"\n") {
        Some(body) => body,
        None => {
            let index = bytes.iter().filter(|&&b| b == b'\n').count() as u64;
            let (mut prefix, failure) = parse_lines(bytes);
            if failure.is_some() {
                return (prefix, failure);
            }
            prefix.truncate(index as usize);
            return (prefix, Some(VerificationReport::bad(index, "missing final newline")));
        }
    };
    let (parsed, failure) = parse_lines(body);
    blocks.extend(parsed);
    (blocks, failure)
}

fn parse_lines(body: &[u8]) -> (Vec<Block>, Option<VerificationReport>) {
    let mut blocks = Vec::new();
    for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
        let index = i as u64;
        let parsed = std::str::from_utf8(raw)
            .map_err(|_| "line is not valid UTF-8".to_string())
            .and_then(|line| Block::from_line(line).map_err(|e| e.to_string()));
        match parsed {
            Ok(block) => blocks.push(block),
            Err(reason) => return (blocks, Some(VerificationReport::bad(index, reason))),
        }
    }
    (blocks, None)
}

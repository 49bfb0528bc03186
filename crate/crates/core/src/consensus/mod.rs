//! Inter-fundraiser protocol: win claims, tie-breaking, block broadcast,
//! chain synchronisation and fork choice.

mod message;
mod node;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use message::{decode_frame, encode_frame, frame_len, DecodeError, Message, MessageBody, MessageType, MAX_FRAME};
pub use node::{winners_of, Action, FundraiserNode, NodeError, NodeSettings, TieBreakWindow};

use crate::ledger::{Block, Cents, Chain, VerificationReport};

/// A fundraiser's announcement that it has collected a student's full target.
/// Other fundraisers stop collecting for that student when they receive it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WinClaim {
    pub student_id: String,
    pub fundraiser_id: String,
    pub lamport_time: u64,
    pub collected: Cents,
}

impl WinClaim {
    fn key(&self) -> (u64, &str) {
        (self.lamport_time, self.fundraiser_id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsensusError {
    #[error("claims are for different students ({0} and {1})")]
    MismatchedStudent(String, String),
    #[error("remote chain is invalid: {}", .0.reason)]
    InvalidRemote(VerificationReport),
}

/// The earlier of two claims for one student, ordered by
/// (lamport_time, fundraiser_id).
pub fn resolve_win_conflict<'a>(a: &'a WinClaim, b: &'a WinClaim) -> Result<&'a WinClaim, ConsensusError> {
    if a.student_id != b.student_id {
        return Err(ConsensusError::MismatchedStudent(a.student_id.clone(), b.student_id.clone()));
    }
    Ok(match a.key().cmp(&b.key()) {
        Ordering::Greater => b,
        _ => a,
    })
}

/// True if `remote` should replace `local`: longer wins, and on equal length
/// the chain whose tip hash is lexicographically smaller.
pub fn prefers_remote(local: &Chain, remote: &Chain) -> bool {
    match remote.len().cmp(&local.len()) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => remote.tip().hash < local.tip().hash,
    }
}

/// Picks between the local chain and untrusted remote blocks.
pub fn fork_choice(local: Chain, remote: Vec<Block>) -> Result<Chain, ConsensusError> {
    let remote = Chain::from_blocks(remote).map_err(ConsensusError::InvalidRemote)?;
    Ok(if prefers_remote(&local, &remote) { remote } else { local })
}

//! Blocks, their canonical hash encoding and the ledger-file line format.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::terms::{ContactInfo, ContractTerms};
use super::LedgerError;
use crate::canonical::{self, EncodingError};
use crate::hash::{sha256, Hash256};

pub const GENESIS_MINER: &str = "GENESIS";
pub const GENESIS_TAG: &str = "TEDUCHAIN-GENESIS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Genesis,
    Contract,
    Amendment,
}

impl BlockKind {
    pub fn tag(self) -> u8 {
        match self {
            BlockKind::Genesis => 0,
            BlockKind::Contract => 1,
            BlockKind::Amendment => 2,
        }
    }
}

/// Reference from an amendment to the block it supersedes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRef {
    pub index: u64,
    pub hash: Hash256,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractPayload {
    pub terms: ContractTerms,
    pub contacts: Vec<ContactInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmendmentPayload {
    pub contacts: Vec<ContactInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenesisPayload {
    pub tag: String,
}

/// Kind-specific block content. The variant determines the kind byte, so a
/// block can never carry a payload that disagrees with its kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Genesis(GenesisPayload),
    Contract(ContractPayload),
    Amendment(AmendmentPayload),
}

impl Payload {
    pub fn kind(&self) -> BlockKind {
        match self {
            Payload::Genesis(_) => BlockKind::Genesis,
            Payload::Contract(_) => BlockKind::Contract,
            Payload::Amendment(_) => BlockKind::Amendment,
        }
    }

    pub fn to_value(&self) -> Value {
        let v = match self {
            Payload::Genesis(p) => serde_json::to_value(p),
            Payload::Contract(p) => serde_json::to_value(p),
            Payload::Amendment(p) => serde_json::to_value(p),
        };
        v.expect("payload types always serialize")
    }

    pub fn canonical_bytes(&self) -> Result<Vec<u8>, EncodingError> {
        canonical::value_to_canonical_bytes(&self.to_value())
    }

    fn from_value(kind: BlockKind, value: Value) -> Result<Self, serde_json::Error> {
        Ok(match kind {
            BlockKind::Genesis => Payload::Genesis(serde_json::from_value(value)?),
            BlockKind::Contract => Payload::Contract(serde_json::from_value(value)?),
            BlockKind::Amendment => Payload::Amendment(serde_json::from_value(value)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub index: u64,
    pub timestamp_ms: u64,
    pub prev_hash: Hash256,
    pub miner_id: String,
    pub payload: Payload,
    pub document_hash: Hash256,
    pub amends: Option<BlockRef>,
    pub hash: Hash256,
}

impl Block {
    /// Builds a block and seals it with its computed hash.
    pub fn sealed(
        index: u64,
        timestamp_ms: u64,
        prev_hash: Hash256,
        miner_id: impl Into<String>,
        payload: Payload,
        document_hash: Hash256,
        amends: Option<BlockRef>,
    ) -> Result<Block, EncodingError> {
        let mut block = Block {
            index,
            timestamp_ms,
            prev_hash,
            miner_id: miner_id.into(),
            payload,
            document_hash,
            amends,
            hash: Hash256::ZERO,
        };
        block.hash = compute_block_hash(&block)?;
        Ok(block)
    }

    pub fn kind(&self) -> BlockKind {
        self.payload.kind()
    }

    pub fn block_ref(&self) -> BlockRef {
        BlockRef {
            index: self.index,
            hash: self.hash,
        }
    }

    pub fn contract(&self) -> Option<&ContractPayload> {
        match &self.payload {
            Payload::Contract(c) => Some(c),
            _ => None,
        }
    }

    pub fn amendment(&self) -> Option<&AmendmentPayload> {
        match &self.payload {
            Payload::Amendment(a) => Some(a),
            _ => None,
        }
    }

    /// Student bound by this block, for contract blocks.
    pub fn student_id(&self) -> Option<&str> {
        self.contract().map(|c| c.terms.student_id.as_str())
    }

    pub fn to_record(&self) -> BlockRecord {
        BlockRecord {
            amends: self.amends,
            document_hash: self.document_hash,
            hash: self.hash,
            index: self.index,
            kind: self.kind(),
            miner_id: self.miner_id.clone(),
            payload: self.payload.to_value(),
            prev_hash: self.prev_hash,
            timestamp_ms: self.timestamp_ms,
        }
    }

    /// One ledger-file line, without the trailing newline.
    pub fn to_line(&self) -> String {
        canonical::to_canonical_string(&self.to_record()).expect("blocks always encode")
    }

    /// Parses one ledger-file line. The line must be in canonical form:
    /// re-encoding the parsed block has to reproduce it byte for byte.
    pub fn from_line(line: &str) -> Result<Block, LedgerError> {
        let record: BlockRecord =
            serde_json::from_str(line).map_err(|e| LedgerError::Malformed(e.to_string()))?;
        let block = Block::try_from(record)?;
        if block.to_line() != line {
            return Err(LedgerError::Malformed("line is not in canonical form".into()));
        }
        Ok(block)
    }
}

/// Transport form of a block: the JSON object written to ledger files and
/// carried in wire messages. Hashing never uses this form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRecord {
    pub amends: Option<BlockRef>,
    pub document_hash: Hash256,
    pub hash: Hash256,
    pub index: u64,
    pub kind: BlockKind,
    pub miner_id: String,
    pub payload: Value,
    pub prev_hash: Hash256,
    pub timestamp_ms: u64,
}

impl TryFrom<BlockRecord> for Block {
    type Error = LedgerError;

    fn try_from(r: BlockRecord) -> Result<Self, Self::Error> {
        let payload = Payload::from_value(r.kind, r.payload)
            .map_err(|e| LedgerError::Malformed(format!("payload: {e}")))?;
        Ok(Block {
            index: r.index,
            timestamp_ms: r.timestamp_ms,
            prev_hash: r.prev_hash,
            miner_id: r.miner_id,
            payload,
            document_hash: r.document_hash,
            amends: r.amends,
            hash: r.hash,
        })
    }
}

/// The bit-exact byte layout hashed for a block. The block's own `hash` field
/// is not part of it.
///
/// index u64 BE | timestamp_ms u64 BE | kind u8 | prev_hash [32] |
/// miner_id u32 BE len + UTF-8 | payload u32 BE len + canonical JSON |
/// document_hash [32] | amends (u64 BE index + [32] hash, or 40 zero bytes)
pub fn canonical_encode(block: &Block) -> Result<Vec<u8>, EncodingError> {
    let payload = block.payload.canonical_bytes()?;
    let miner = block.miner_id.as_bytes();
    let miner_len = u32::try_from(miner.len())
        .map_err(|_| EncodingError::Unrepresentable("miner_id too long".into()))?;
    let payload_len = u32::try_from(payload.len())
        .map_err(|_| EncodingError::Unrepresentable("payload too long".into()))?;

    let mut out = Vec::with_capacity(8 + 8 + 1 + 32 + 4 + miner.len() + 4 + payload.len() + 32 + 40);
    out.extend_from_slice(&block.index.to_be_bytes());
    out.extend_from_slice(&block.timestamp_ms.to_be_bytes());
    out.push(block.kind().tag());
    out.extend_from_slice(block.prev_hash.as_bytes());
    out.extend_from_slice(&miner_len.to_be_bytes());
    out.extend_from_slice(miner);
    out.extend_from_slice(&payload_len.to_be_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(block.document_hash.as_bytes());
    match block.amends {
        Some(r) => {
            out.extend_from_slice(&r.index.to_be_bytes());
            out.extend_from_slice(r.hash.as_bytes());
        }
        None => out.extend_from_slice(&[0u8; 40]),
    }
    Ok(out)
}

pub fn compute_block_hash(block: &Block) -> Result<Hash256, EncodingError> {
    canonical_encode(block).map(|bytes| sha256(&bytes))
}

/// Block 0, identical on every replica.
pub fn make_genesis() -> Block {
    Block::sealed(
        0,
        0,
        Hash256::ZERO,
        GENESIS_MINER,
        Payload::Genesis(GenesisPayload {
            tag: GENESIS_TAG.to_string(),
        }),
        Hash256::ZERO,
        None,
    )
    .expect("genesis encodes")
}

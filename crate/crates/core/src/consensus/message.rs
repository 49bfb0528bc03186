//! Peer messages and their wire framing.
//!
//! A frame is a 4-byte big-endian payload length followed by a canonical JSON
//! object `{body, lamport, sender, type}`. Blocks travel in ledger-file line
//! form.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::WinClaim;
use crate::canonical;
use crate::funding::StudentListing;
use crate::ledger::Block;

/// Upper bound on a frame's payload, to refuse absurd length prefixes.
pub const MAX_FRAME: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageType {
    StudentActivated,
    WinClaim,
    BlockAnnounce,
    ChainRequest,
    ChainResponse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum MessageBody {
    StudentActivated(StudentListing),
    WinClaim(WinClaim),
    BlockAnnounce(Block),
    ChainRequest,
    ChainResponse(Vec<Block>),
}

impl MessageBody {
    pub fn message_type(&self) -> MessageType {
        match self {
            MessageBody::StudentActivated(_) => MessageType::StudentActivated,
            MessageBody::WinClaim(_) => MessageType::WinClaim,
            MessageBody::BlockAnnounce(_) => MessageType::BlockAnnounce,
            MessageBody::ChainRequest => MessageType::ChainRequest,
            MessageBody::ChainResponse(_) => MessageType::ChainResponse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub sender: String,
    pub lamport: u64,
    pub body: MessageBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated frame: {0}")]
    Truncated(String),
    #[error("frame of {0} bytes exceeds the limit")]
    Oversized(usize),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("malformed message: {0}")]
    Malformed(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    #[serde(rename = "type")]
    kind: String,
    sender: String,
    lamport: u64,
    body: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnounceBody {
    block: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseBody {
    blocks: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmptyBody {}

impl Message {
    pub fn message_type(&self) -> MessageType {
        self.body.message_type()
    }

    fn body_value(&self) -> Value {
        match &self.body {
            MessageBody::StudentActivated(l) => serde_json::to_value(l).expect("listing serializes"),
            MessageBody::WinClaim(c) => serde_json::to_value(c).expect("claim serializes"),
            MessageBody::BlockAnnounce(b) => json!({ "block": b.to_line() }),
            MessageBody::ChainRequest => json!({}),
            MessageBody::ChainResponse(blocks) => {
                json!({ "blocks": blocks.iter().map(Block::to_line).collect::<Vec<_>>() })
            }
        }
    }

    /// The canonical JSON object carried inside a frame.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let kind = serde_json::to_value(self.message_type()).expect("type serializes");
        let envelope = json!({
            "type": kind,
            "sender": self.sender,
            "lamport": self.lamport,
            "body": self.body_value(),
        });
        canonical::value_to_canonical_bytes(&envelope).expect("messages contain no floats")
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Message, DecodeError> {
        let envelope: Envelope = serde_json::from_slice(bytes).map_err(|e| DecodeError::Malformed(e.to_string()))?;
        let kind: MessageType = serde_json::from_value(Value::String(envelope.kind.clone()))
            .map_err(|_| DecodeError::UnknownType(envelope.kind.clone()))?;
        let malformed = |e: serde_json::Error| DecodeError::Malformed(format!("{kind:?} body: {e}"));
        let parse_block = |line: &str| Block::from_line(line).map_err(|e| DecodeError::Malformed(e.to_string()));
        let body = match kind {
            MessageType::StudentActivated => {
                MessageBody::StudentActivated(serde_json::from_value(envelope.body).map_err(malformed)?)
            }
            MessageType::WinClaim => MessageBody::WinClaim(serde_json::from_value(envelope.body).map_err(malformed)?),
            MessageType::BlockAnnounce => {
                let b: AnnounceBody = serde_json::from_value(envelope.body).map_err(malformed)?;
                MessageBody::BlockAnnounce(parse_block(&b.block)?)
            }
            MessageType::ChainRequest => {
                let _: EmptyBody = serde_json::from_value(envelope.body).map_err(malformed)?;
                MessageBody::ChainRequest
            }
            MessageType::ChainResponse => {
                let b: ResponseBody = serde_json::from_value(envelope.body).map_err(malformed)?;
                MessageBody::ChainResponse(b.blocks.iter().map(|l| parse_block(l)).collect::<Result<_, _>>()?)
            }
        };
        Ok(Message {
            sender: envelope.sender,
            lamport: envelope.lamport,
            body,
        })
    }
}

pub fn encode_frame(message: &Message) -> Vec<u8> {
    let payload = message.to_json_bytes();
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Payload length announced by a frame header, once four bytes are present.
pub fn frame_len(header: &[u8]) -> Result<Option<usize>, DecodeError> {
    let Some(prefix) = header.get(..4) else {
        return Ok(None);
    };
    let len = u32::from_be_bytes(prefix.try_into().expect("four bytes")) as usize;
    if len > MAX_FRAME {
        return Err(DecodeError::Oversized(len));
    }
    Ok(Some(len))
}

/// Decodes exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Message, DecodeError> {
    let len = frame_len(bytes)?.ok_or_else(|| DecodeError::Truncated(format!("{} byte header", bytes.len())))?;
    let payload = &bytes[4..];
    if payload.len() < len {
        return Err(DecodeError::Truncated(format!("{} of {len} payload bytes", payload.len())));
    }
    if payload.len() > len {
        return Err(DecodeError::Malformed(format!("{} trailing bytes", payload.len() - len)));
    }
    Message::from_json_bytes(payload)
}

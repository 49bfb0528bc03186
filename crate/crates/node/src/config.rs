use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use teduchain_core::ledger::Cents;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerConfig {
    pub node_id: String,
    pub address: SocketAddr,
}

/// Node configuration, read from TOML.
///
/// ```toml
/// node_id = "F1"
/// api_address = "127.0.0.1:8081"
/// peer_address = "127.0.0.1:9081"
/// data_dir = "data/f1"
/// min_score = 650
/// max_income_cents = 4000000
/// benefit_percent_bp = 500
/// benefit_period_months = 60
///
/// [[peers]]
/// node_id = "F2"
/// address = "127.0.0.1:9082"
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub node_id: String,
    pub api_address: SocketAddr,
    pub peer_address: SocketAddr,
    #[serde(default)]
    pub peers: Vec<PeerConfig>,
    pub data_dir: PathBuf,
    /// Defaults to `<data_dir>/outbox`.
    #[serde(default)]
    pub outbox_dir: Option<PathBuf>,
    /// CSV file with header `name,institute,high_school_score`.
    #[serde(default)]
    pub verification_records: Option<PathBuf>,
    pub min_score: u32,
    pub max_income_cents: Cents,
    pub benefit_percent_bp: u32,
    pub benefit_period_months: u32,
    #[serde(default = "default_tie_break_ms")]
    pub tie_break_ms: u64,
    #[serde(default = "default_mining_interval_ms")]
    pub mining_interval_ms: u64,
}

fn default_tie_break_ms() -> u64 {
    500
}

fn default_mining_interval_ms() -> u64 {
    100
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl NodeConfig {
    pub fn load(path: &Path) -> Result<NodeConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let config: NodeConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.node_id.is_empty() {
            return Err(ConfigError::Invalid("node_id must not be empty".into()));
        }
        let mut ids = BTreeSet::from([self.node_id.as_str()]);
        for p in &self.peers {
            if !ids.insert(p.node_id.as_str()) {
                return Err(ConfigError::Invalid(format!("node id {} appears twice", p.node_id)));
            }
        }
        if self.benefit_percent_bp > 10_000 {
            return Err(ConfigError::Invalid("benefit_percent_bp exceeds 10000".into()));
        }
        Ok(())
    }

    pub fn outbox(&self) -> PathBuf {
        self.outbox_dir
            .clone()
            .unwrap_or_else(|| self.data_dir.join(teduchain_core::store::OUTBOX_DIR))
    }
}

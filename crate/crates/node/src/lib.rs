//! A networked fundraiser node: the HTTP API, on-disk state under the data
//! directory (`ledger.jsonl`, `pledges.jsonl`, `registry.json`, `outbox/`)
//! and TCP links to the other fundraisers.

pub mod api;
pub mod config;
pub mod service;
pub mod transport;

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;
use tokio::net::TcpListener;
use tokio::task::JoinSet;
use tracing::{info, warn};

pub use api::{router, AppState, ErrorBody};
pub use config::{ConfigError, NodeConfig, PeerConfig};
pub use service::{NodeService, PledgeRequest, ServiceError};
pub use transport::Outbound;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("cannot bind {address}: {source}")]
    Bind { address: SocketAddr, source: std::io::Error },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// A started node. Dropping it leaves the tasks running; call
/// [`RunningNode::shutdown`] to stop them.
pub struct RunningNode {
    pub api_address: SocketAddr,
    pub peer_address: SocketAddr,
    pub service: Arc<Mutex<NodeService>>,
    state: AppState,
    tasks: JoinSet<()>,
}

impl RunningNode {
    /// Handle for issuing API commands in-process.
    pub fn state(&self) -> AppState {
        self.state.clone()
    }

    /// Stops every task of the node and waits for them to finish.
    pub async fn shutdown(mut self) {
        self.tasks.abort_all();
        while self.tasks.join_next().await.is_some() {}
    }

    /// Resolves when any task of the node ends.
    pub async fn wait(&mut self) {
        self.tasks.join_next().await;
    }
}

/// Starts a node on already-bound listeners.
pub async fn start_with_listeners(
    config: NodeConfig,
    api: TcpListener,
    peer: TcpListener,
) -> Result<RunningNode, RunError> {
    config.validate()?;
    let service = NodeService::open(&config)?;
    let api_address = api.local_addr()?;
    let peer_address = peer.local_addr()?;
    let mut tasks = JoinSet::new();
    let peers: Vec<(String, SocketAddr)> = config.peers.iter().map(|p| (p.node_id.clone(), p.address)).collect();
    let outbound = transport::connect_peers(&peers, &mut tasks);
    let service = Arc::new(Mutex::new(service));
    let startup = service.lock().expect("node lock poisoned").take_outgoing();
    outbound.dispatch(startup);

    tasks.spawn(transport::serve_peers(peer, service.clone(), outbound.clone()));
    tasks.spawn(mining_loop(
        service.clone(),
        outbound.clone(),
        Duration::from_millis(config.mining_interval_ms.max(1)),
    ));
    let state = AppState {
        service: service.clone(),
        outbound,
    };
    let app = router(state.clone());
    tasks.spawn(async move {
        if let Err(e) = axum::serve(api, app).await {
            warn!("api server stopped: {e}");
        }
    });
    info!(node = %config.node_id, api = %api_address, peer = %peer_address, "node started");
    Ok(RunningNode {
        api_address,
        peer_address,
        service,
        state,
        tasks,
    })
}

/// Binds the configured addresses and starts the node.
pub async fn start(config: NodeConfig) -> Result<RunningNode, RunError> {
    let api = TcpListener::bind(config.api_address).await.map_err(|source| RunError::Bind {
        address: config.api_address,
        source,
    })?;
    let peer = TcpListener::bind(config.peer_address).await.map_err(|source| RunError::Bind {
        address: config.peer_address,
        source,
    })?;
    start_with_listeners(config, api, peer).await
}

/// Runs a node until one of its tasks ends.
pub async fn run_node(config: NodeConfig) -> Result<(), RunError> {
    let mut node = start(config).await?;
    node.wait().await;
    node.shutdown().await;
    Ok(())
}

// Periodic completion check: mines claims whose tie-break window closed.
async fn mining_loop(service: Arc<Mutex<NodeService>>, outbound: Outbound, every: Duration) {
    let mut interval = tokio::time::interval(every);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        interval.tick().await;
        let outgoing = {
            let mut node = service.lock().expect("node lock poisoned");
            if let Err(e) = node.tick() {
                warn!("mining tick failed: {e}");
            }
            node.take_outgoing()
        };
        outbound.dispatch(outgoing);
    }
}

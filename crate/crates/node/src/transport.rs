//! Peer links: length-prefixed canonical-JSON frames over TCP. Each peer has
//! one outbound writer task that reconnects with backoff; inbound readers
//! feed the node one message at a time.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinSet;
use tracing::{debug, info, warn};

use teduchain_core::consensus::{decode_frame, encode_frame, frame_len, Message};

use crate::service::NodeService;

const MIN_BACKOFF: Duration = Duration::from_millis(50);
const MAX_BACKOFF: Duration = Duration::from_secs(2);

/// Queues for messages leaving this node, one per configured peer.
#[derive(Clone, Default)]
pub struct Outbound {
    queues: Arc<BTreeMap<String, mpsc::UnboundedSender<Message>>>,
}

impl Outbound {
    pub fn dispatch(&self, outgoing: Vec<(String, Message)>) {
        for (to, message) in outgoing {
            match self.queues.get(&to) {
                Some(queue) => {
                    if queue.send(message).is_err() {
                        warn!(peer = %to, "peer link closed; message dropped");
                    }
                }
                None => warn!(peer = %to, "no link to peer; message dropped"),
            }
        }
    }
}

/// Spawns one writer per peer and returns the queues feeding them.
pub fn connect_peers(peers: &[(String, SocketAddr)], tasks: &mut JoinSet<()>) -> Outbound {
    let mut queues = BTreeMap::new();
    for (id, addr) in peers {
        let (tx, rx) = mpsc::unbounded_channel();
        queues.insert(id.clone(), tx);
        tasks.spawn(peer_writer(id.clone(), *addr, rx));
    }
    Outbound {
        queues: Arc::new(queues),
    }
}

async fn peer_writer(peer: String, addr: SocketAddr, mut rx: mpsc::UnboundedReceiver<Message>) {
    let mut pending: Option<Vec<u8>> = None;
    let mut backoff = MIN_BACKOFF;
    loop {
        let mut stream = match TcpStream::connect(addr).await {
            Ok(s) => {
                info!(peer = %peer, %addr, "peer connected");
                backoff = MIN_BACKOFF;
                s
            }
            Err(e) => {
                debug!(peer = %peer, %addr, "connect failed: {e}");
                tokio::time::sleep(backoff).await;
                backoff = (backoff * 2).min(MAX_BACKOFF);
                continue;
            }
        };
        loop {
            let frame = match pending.take() {
                Some(f) => f,
                None => match rx.recv().await {
                    Some(m) => encode_frame(&m),
                    None => return,
                },
            };
            if let Err(e) = stream.write_all(&frame).await {
                warn!(peer = %peer, "send failed, reconnecting: {e}");
                pending = Some(frame);
                break;
            }
        }
    }
}

/// Accepts peer connections and hands every decoded message to the node.
pub async fn serve_peers(listener: TcpListener, service: Arc<Mutex<NodeService>>, outbound: Outbound) {
    let mut readers = JoinSet::new();
    loop {
        match listener.accept().await {
            Ok((stream, from)) => {
                debug!(%from, "peer connection accepted");
                readers.spawn(read_frames(stream, service.clone(), outbound.clone()));
            }
            Err(e) => {
                warn!("peer accept failed: {e}");
                tokio::time::sleep(MIN_BACKOFF).await;
            }
        }
    }
}

async fn read_frames(mut stream: TcpStream, service: Arc<Mutex<NodeService>>, outbound: Outbound) {
    let mut header = [0u8; 4];
    loop {
        if stream.read_exact(&mut header).await.is_err() {
            return;
        }
        let len = match frame_len(&header) {
            Ok(Some(len)) => len,
            Ok(None) => return,
            Err(e) => {
                warn!("dropping peer connection: {e}");
                return;
            }
        };
        let mut frame = vec![0u8; 4 + len];
        frame[..4].copy_from_slice(&header);
        if stream.read_exact(&mut frame[4..]).await.is_err() {
            return;
        }
        let message = match decode_frame(&frame) {
            Ok(m) => m,
            Err(e) => {
                // The frame boundary is intact, so the link stays usable.
                warn!("undecodable peer message dropped: {e}");
                continue;
            }
        };
        let outgoing = {
            let mut node = service.lock().expect("node lock poisoned");
            if let Err(e) = node.handle_message(message) {
                warn!("peer message failed: {e}");
            }
            node.take_outgoing()
        };
        outbound.dispatch(outgoing);
    }
}

mod common;

use std::time::Duration;

use axum::http::StatusCode;
use serde_json::json;
use tokio::net::TcpListener;

use common::*;
use teduchain_core::ledger::encode_ledger;
use teduchain_node::{start_with_listeners, AppState, NodeConfig, PeerConfig, RunningNode};

struct Listeners {
    api: TcpListener,
    peer: TcpListener,
}

async fn bind() -> Listeners {
    Listeners {
        api: TcpListener::bind("127.0.0.1:0").await.unwrap(),
        peer: TcpListener::bind("127.0.0.1:0").await.unwrap(),
    }
}

fn with_peer(cfg: NodeConfig, id: &str, l: &Listeners) -> NodeConfig {
    NodeConfig {
        peers: vec![PeerConfig {
            node_id: id.into(),
            address: l.peer.local_addr().unwrap(),
        }],
        ..cfg
    }
}

fn ledger(node: &RunningNode) -> Vec<u8> {
    encode_ledger(node.service.lock().unwrap().node().chain().blocks())
}

async fn wait_for(what: &str, mut done: impl FnMut() -> bool) {
    for _ in 0..500 {
        if done() {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("timed out waiting for {what}");
}

async fn activate(state: &AppState, student: &str, institute: &str, score: u32, target: u64) {
    let (status, app) = post(state, "/applications", application(student, institute, score, target)).await;
    assert_eq!(status, StatusCode::CREATED, "{app}");
    let id = app["application_id"].as_str().unwrap().to_string();
    let (_, outcome) = post(state, &format!("/applications/{id}/verify"), json!(null)).await;
    assert_eq!(outcome["eligible"], true, "{outcome}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn two_nodes_agree_over_tcp() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (l1, l2) = (bind().await, bind().await);
    let c1 = with_peer(config(d1.path(), "F1", vec![], 150), "F2", &l2);
    let records = c1.verification_records.clone().unwrap();
    std::fs::write(&records, format!("{RECORDS}Dee Lau,FNU,900\n")).unwrap();
    let c2 = with_peer(config(d2.path(), "F2", vec![], 150), "F1", &l1);
    let n1 = start_with_listeners(c1, l1.api, l1.peer).await.unwrap();
    let n2 = start_with_listeners(c2, l2.api, l2.peer).await.unwrap();
    let (s1, s2) = (n1.state(), n2.state());
    seed(&s1, &["F1", "F2"]).await;
    seed(&s2, &["F1", "F2"]).await;

    // S1 is verified on F1 and announced to F2, which funds it alone.
    activate(&s1, "S1", "USP", 850, 80_000).await;
    wait_for("F2 to list S1", || n2.service.lock().unwrap().node().engine().student("S1").is_some()).await;
    post(&s2, "/wallets/P2/deposit", json!({"amount_cents": 200_000})).await;
    let (status, p) = post(&s2, "/pledges", pledge("P2", "S1", "F2", 80_000)).await;
    assert_eq!(status, StatusCode::CREATED, "{p}");
    wait_for("both chains to hold S1", || {
        n1.service.lock().unwrap().node().chain().len() == 2 && n2.service.lock().unwrap().node().chain().len() == 2
    })
    .await;
    assert_eq!(ledger(&n1), ledger(&n2));
    let (_, status_view) = get(&s1, "/students/S1/status").await;
    assert_eq!(status_view["contract"]["fundraiser_id"], "F2");
    assert_eq!(status_view["application"]["status"], "Won");

    // Both fundraisers complete S2 inside the tie-break window.
    activate(&s1, "S2", "FNU", 720, 50_000).await;
    wait_for("F2 to list S2", || n2.service.lock().unwrap().node().engine().student("S2").is_some()).await;
    post(&s1, "/wallets/P1/deposit", json!({"amount_cents": 50_000})).await;
    let (a, b) = tokio::join!(
        post(&s1, "/pledges", pledge("P1", "S2", "F1", 50_000)),
        post(&s2, "/pledges", pledge("P2", "S2", "F2", 50_000)),
    );
    assert!(a.0 == StatusCode::CREATED || b.0 == StatusCode::CREATED, "{a:?} {b:?}");
    wait_for("convergence on S2", || {
        let (x, y) = (ledger(&n1), ledger(&n2));
        x == y && n1.service.lock().unwrap().node().chain().contract_block("S2").is_some()
    })
    .await;
    for node in [&n1, &n2] {
        let service = node.service.lock().unwrap();
        let chain = service.node().chain();
        assert_eq!(chain.winners().filter(|(s, _)| *s == "S2").count(), 1);
        let winner = chain.winner_of("S2").unwrap().to_string();
        for p in service.node().engine().pledges().filter(|p| p.student_id == "S2") {
            let expected = if p.fundraiser_id == winner { "Won" } else { "RolledBack" };
            assert_eq!(format!("{:?}", p.status), expected);
        }
        assert!(service.node().engine().wallets().all(|w| w.reserved == 0));
    }

    // F2 stops; F1 mines while it is away; F2 catches up on restart.
    let peer2 = n2.peer_address;
    drop(s2);
    n2.shutdown().await;
    post(&s1, "/accounts", student("S4", "Dee Lau")).await;
    activate(&s1, "S4", "FNU", 900, 30_000).await;
    post(&s1, "/wallets/P1/deposit", json!({"amount_cents": 30_000})).await;
    let (status, p) = post(&s1, "/pledges", pledge("P1", "S4", "F1", 30_000)).await;
    assert_eq!(status, StatusCode::CREATED, "{p}");
    wait_for("F1 to mine S4", || n1.service.lock().unwrap().node().chain().len() == 4).await;

    let l2 = Listeners {
        api: TcpListener::bind("127.0.0.1:0").await.unwrap(),
        peer: TcpListener::bind(peer2).await.unwrap(),
    };
    let c2 = NodeConfig {
        peers: vec![PeerConfig {
            node_id: "F1".into(),
            address: n1.peer_address,
        }],
        ..config(d2.path(), "F2", vec![], 150)
    };
    let n2 = start_with_listeners(c2, l2.api, l2.peer).await.unwrap();
    wait_for("F2 to catch up", || ledger(&n1) == ledger(&n2)).await;
    assert_eq!(n2.service.lock().unwrap().node().chain().winner_of("S4"), Some("F1"));
    n1.shutdown().await;
    n2.shutdown().await;
}

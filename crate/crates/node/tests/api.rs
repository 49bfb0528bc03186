mod common;

use std::sync::{Arc, Mutex};

use axum::http::StatusCode;
use serde_json::json;

use common::*;
use teduchain_core::ledger::make_genesis;
use teduchain_core::sha256;
use teduchain_node::{AppState, NodeService, Outbound};

fn single_node(dir: &std::path::Path) -> AppState {
    let service = NodeService::open(&config(dir, "F1", vec![], 0)).unwrap();
    AppState {
        service: Arc::new(Mutex::new(service)),
        outbound: Outbound::default(),
    }
}

#[tokio::test]
async fn empty_node_is_healthy_with_genesis_only() {
    let dir = tempfile::tempdir().unwrap();
    let state = single_node(dir.path());
    let (status, body) = get(&state, "/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["chain_length"], 1);
    let (_, chain) = get(&state, "/chain").await;
    assert_eq!(chain["length"], 1);
    assert_eq!(chain["tip_hash"], make_genesis().hash.to_hex());
    let (_, report) = get(&state, "/chain/verify").await;
    assert_eq!(report["valid"], true);
    assert!(dir.path().join("data/ledger.jsonl").exists());
}

#[tokio::test]
async fn full_funding_flow_mines_one_contract() {
    let dir = tempfile::tempdir().unwrap();
    let state = single_node(dir.path());
    seed(&state, &["F1"]).await;

    let (status, app) = post(&state, "/applications", application("S1", "USP", 850, 100_000)).await;
    assert_eq!(status, StatusCode::CREATED, "{app}");
    let app_id = app["application_id"].as_str().unwrap().to_string();
    let (status, outcome) = post(&state, &format!("/applications/{app_id}/verify"), json!(null)).await;
    assert_eq!(status, StatusCode::OK, "{outcome}");
    assert_eq!(outcome["eligible"], true);

    let (_, active) = get(&state, "/students/active").await;
    assert_eq!(active.as_array().unwrap().len(), 1);
    assert_eq!(active[0]["student_id"], "S1");
    assert_eq!(active[0]["remaining"], 100_000);

    assert_eq!(post(&state, "/wallets/P1/deposit", json!({"amount_cents": 60_000})).await.0, StatusCode::OK);
    let (status, wallet) = post(&state, "/wallets/P2/deposit", json!({"amount_cents": 30_000})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(wallet["available"], 30_000);

    let (status, p) = post(&state, "/pledges", pledge("P1", "S1", "F1", 40_000)).await;
    assert_eq!(status, StatusCode::CREATED, "{p}");
    assert_eq!(p["status"], "Active");
    let (_, w1) = get(&state, "/wallets/P1").await;
    assert_eq!((w1["available"].as_u64(), w1["reserved"].as_u64()), (Some(20_000), Some(40_000)));

    let (_, status_view) = get(&state, "/students/S1/status").await;
    assert_eq!(status_view["race"]["collected"]["F1"], 40_000);
    assert!(status_view["contract"].is_null());

    // P2 can cover only half of what is still needed.
    let (status, err) = post(&state, "/pledges", pledge("P2", "S1", "F1", 60_000)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error_code"], "InsufficientFunds");
    assert_eq!(post(&state, "/wallets/P2/deposit", json!({"amount_cents": 30_000})).await.0, StatusCode::OK);

    let (status, p) = post(&state, "/pledges", pledge("P2", "S1", "F1", 60_000)).await;
    assert_eq!(status, StatusCode::CREATED, "{p}");

    let (_, chain) = get(&state, "/chain").await;
    assert_eq!(chain["length"], 2);
    let (status, block) = get(&state, "/blocks/1").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(block["kind"], "contract");
    assert_eq!(block["miner_id"], "F1");
    assert_eq!(block["prev_hash"], make_genesis().hash.to_hex());
    let terms = &block["payload"]["terms"];
    assert_eq!(terms["student_id"], "S1");
    assert_eq!(terms["program_cost"], 100_000);
    assert_eq!(terms["fundraiser_id"], "F1");
    assert_eq!(terms["benefit_percent_bp"], 500);
    assert_eq!(
        terms["shares"],
        json!([{"sponsor_id": "P1", "amount": 40_000}, {"sponsor_id": "P2", "amount": 60_000}])
    );

    let (status, contract) = get(&state, "/contracts/S1").await;
    assert_eq!(status, StatusCode::OK);
    let document = std::fs::read(dir.path().join("data/outbox/S1.contract.json")).unwrap();
    assert_eq!(contract["document_hash"], sha256(&document).to_hex());
    assert_eq!(block["document_hash"], contract["document_hash"]);

    let (_, status_view) = get(&state, "/students/S1/status").await;
    assert_eq!(status_view["contract"]["block_index"], 1);
    assert_eq!(status_view["application"]["status"], "Won");
    let (_, active) = get(&state, "/students/active").await;
    assert!(active.as_array().unwrap().is_empty());
    for sponsor in ["P1", "P2"] {
        let (_, w) = get(&state, &format!("/wallets/{sponsor}")).await;
        assert_eq!(w["reserved"], 0);
        assert!(w["pledges"].as_array().unwrap().iter().all(|p| p["status"] == "Won"));
    }
    let (_, report) = get(&state, "/chain/verify").await;
    assert_eq!(report["valid"], true);
}

#[tokio::test]
async fn validation_errors_and_unknown_ids() {
    let dir = tempfile::tempdir().unwrap();
    let state = single_node(dir.path());
    seed(&state, &["F1"]).await;
    let (_, app) = post(&state, "/applications", application("S1", "USP", 850, 100_000)).await;
    let app_id = app["application_id"].as_str().unwrap().to_string();
    post(&state, &format!("/applications/{app_id}/verify"), json!(null)).await;
    post(&state, "/wallets/P1/deposit", json!({"amount_cents": 500_000})).await;

    let cases = [
        (pledge("P1", "S1", "F1", 0), StatusCode::BAD_REQUEST, "NonPositiveAmount"),
        (pledge("P1", "S1", "F1", 100_001), StatusCode::BAD_REQUEST, "ExceedsRemaining"),
        (pledge("P1", "S1", "F2", 10), StatusCode::BAD_REQUEST, "ForeignFundraiser"),
        (pledge("P9", "S1", "F1", 10), StatusCode::NOT_FOUND, "NotFound"),
        (pledge("P1", "S9", "F1", 10), StatusCode::NOT_FOUND, "NotFound"),
    ];
    for (body, status, code) in cases {
        let (s, err) = post(&state, "/pledges", body.clone()).await;
        assert_eq!((s, err["error_code"].as_str()), (status, Some(code)), "{body}");
        assert!(err["message"].as_str().is_some_and(|m| !m.is_empty()));
    }

    let (s, err) = post(&state, "/pledges", json!({"sponsor_id": "P1"})).await;
    assert_eq!((s, err["error_code"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidBody")));
    let (s, err) = post(&state, "/accounts", json!({"role": "Sponsor", "name": "X", "email": "x@example.org"})).await;
    assert_eq!((s, err["error_code"].as_str()), (StatusCode::BAD_REQUEST, Some("MissingFinancialInfo")));
    let (s, err) = post(&state, "/accounts", sponsor("P1")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{err}");

    // Below the minimum score.
    let (_, app) = post(&state, "/applications", application("S3", "USP", 610, 50_000)).await;
    let app_id = app["application_id"].as_str().unwrap().to_string();
    let (s, outcome) = post(&state, &format!("/applications/{app_id}/verify"), json!(null)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((outcome["eligible"].as_bool(), outcome["reason"].as_str()), (Some(false), Some("ScoreBelowMinimum")));

    for uri in ["/wallets/P9", "/students/S9/status", "/contracts/S1", "/blocks/7"] {
        assert_eq!(get(&state, uri).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
    assert_eq!(post(&state, "/applications/APP-999999/verify", json!(null)).await.0, StatusCode::NOT_FOUND);
    assert_eq!(post(&state, "/wallets/P9/deposit", json!({"amount_cents": 5})).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&state, "/blocks/x").await.0, StatusCode::BAD_REQUEST);
}

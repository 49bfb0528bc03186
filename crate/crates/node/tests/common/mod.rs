#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use teduchain_core::audit::audit_engine;
use teduchain_node::{router, AppState, NodeConfig, PeerConfig};

pub const RECORDS: &str = "name,institute,high_school_score\nAna Tora,USP,850\nBen Kata,FNU,720\nCal Vuni,USP,610\n";

pub fn config(dir: &Path, node_id: &str, peers: Vec<PeerConfig>, tie_break_ms: u64) -> NodeConfig {
    let records = dir.join("records.csv");
    std::fs::write(&records, RECORDS).unwrap();
    NodeConfig {
        node_id: node_id.into(),
        api_address: "127.0.0.1:0".parse().unwrap(),
        peer_address: "127.0.0.1:0".parse().unwrap(),
        peers,
        data_dir: dir.join("data"),
        outbox_dir: None,
        verification_records: Some(records),
        min_score: 650,
        max_income_cents: 40_000_00,
        benefit_percent_bp: 500,
        benefit_period_months: 60,
        tie_break_ms,
        mining_interval_ms: 20,
    }
}

/// Sends one request through the router and checks the funding invariants
/// afterwards.
pub async fn call(state: &AppState, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(v) => Body::from(v.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let response = router(state.clone()).oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    {
        let service = state.service.lock().unwrap();
        let engine = service.node().engine();
        engine.check_invariants().unwrap();
        audit_engine(engine).unwrap();
    }
    (status, value)
}

pub async fn post(state: &AppState, uri: &str, body: Value) -> (StatusCode, Value) {
    call(state, Method::POST, uri, Some(body)).await
}

pub async fn get(state: &AppState, uri: &str) -> (StatusCode, Value) {
    call(state, Method::GET, uri, None).await
}

pub fn fundraiser(id: &str) -> Value {
    json!({"account_id": id, "role": "Fundraiser", "name": format!("Fund {id}"), "email": format!("{id}@fund.example.org"), "business_identification_number": format!("BIN-{id}")})
}

pub fn sponsor(id: &str) -> Value {
    json!({"account_id": id, "role": "Sponsor", "name": format!("Sponsor {id}"), "email": format!("{id}@sponsor.example.org"), "financial_info": format!("ACCT-{id}")})
}

pub fn student(id: &str, name: &str) -> Value {
    json!({"account_id": id, "role": "Student", "name": name, "email": format!("{id}@student.example.org"), "address": "Suva", "phone": "+679 555 0101"})
}

pub fn application(student_id: &str, institute: &str, score: u32, target: u64) -> Value {
    json!({
        "student_id": student_id,
        "program_name": "BSc Computing Science",
        "institute_name": institute,
        "high_school_score": score,
        "family_income": 15_000_00,
        "target_amount": target,
        "program_duration_months": 36
    })
}

pub fn pledge(sponsor: &str, student: &str, fundraiser: &str, amount: u64) -> Value {
    json!({"sponsor_id": sponsor, "student_id": student, "fundraiser_id": fundraiser, "amount_cents": amount})
}

/// Registers the fundraisers plus students S1 to S3 and sponsors P1, P2.
pub async fn seed(state: &AppState, fundraisers: &[&str]) {
    for f in fundraisers {
        assert_eq!(post(state, "/accounts", fundraiser(f)).await.0, StatusCode::CREATED);
    }
    for body in [
        student("S1", "Ana Tora"),
        student("S2", "Ben Kata"),
        student("S3", "Cal Vuni"),
        sponsor("P1"),
        sponsor("P2"),
    ] {
        let (status, value) = post(state, "/accounts", body).await;
        assert_eq!(status, StatusCode::CREATED, "{value}");
    }
}

//! HTTP API consumed by the dashboards. JSON bodies, integer-cent amounts.
//! Validation failures answer 400 with `{error_code, message}`; unknown ids
//! answer 404.

use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use teduchain_core::consensus::NodeError;
use teduchain_core::funding::FundingError;
use teduchain_core::ledger::Cents;
use teduchain_core::registry::{AccountRequest, ApplicationRequest, RegistryError};

use crate::service::{NodeService, PledgeRequest, ServiceError};
use crate::transport::Outbound;

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<Mutex<NodeService>>,
    pub outbound: Outbound,
}

impl AppState {
    /// Runs a command under the node lock and hands its messages to the
    /// transport.
    fn run<T>(&self, f: impl FnOnce(&mut NodeService) -> Result<T, ServiceError>) -> Result<T, ApiError> {
        let (result, outgoing) = {
            let mut service = self.service.lock().expect("node lock poisoned");
            let result = f(&mut service);
            (result, service.take_outgoing())
        };
        self.outbound.dispatch(outgoing);
        result.map_err(ApiError::from)
    }

    fn read<T>(&self, f: impl FnOnce(&NodeService) -> Result<T, ServiceError>) -> Result<T, ApiError> {
        let service = self.service.lock().expect("node lock poisoned");
        f(&service).map_err(ApiError::from)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error_code: code.into(),
                message: message.into(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

// Error codes are the error variant names, e.g. `InsufficientFunds`.
fn variant_name(debug: String) -> String {
    debug
        .split(|c: char| !c.is_alphanumeric() && c != '_')
        .next()
        .unwrap_or_default()
        .to_string()
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let message = e.to_string();
        match e {
            ServiceError::NotFound { .. }
            | ServiceError::Registry(RegistryError::UnknownAccount(_))
            | ServiceError::Registry(RegistryError::UnknownApplication(_))
            | ServiceError::Registry(RegistryError::UnknownStudent(_))
            | ServiceError::Node(NodeError::Funding(FundingError::UnknownSponsor(_)))
            | ServiceError::Node(NodeError::Funding(FundingError::UnknownStudent(_))) => {
                ApiError::new(StatusCode::NOT_FOUND, "NotFound", message)
            }
            ServiceError::Registry(inner) => ApiError::new(StatusCode::BAD_REQUEST, variant_name(format!("{inner:?}")), message),
            ServiceError::Node(NodeError::Funding(inner)) => {
                ApiError::new(StatusCode::BAD_REQUEST, variant_name(format!("{inner:?}")), message)
            }
            ServiceError::Node(NodeError::Ledger(inner)) => {
                ApiError::new(StatusCode::BAD_REQUEST, variant_name(format!("{inner:?}")), message)
            }
            ServiceError::Node(inner) => ApiError::new(StatusCode::BAD_REQUEST, variant_name(format!("{inner:?}")), message),
            ServiceError::Store(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StorageError", message)
            }
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "InvalidBody", e.body_text())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DepositRequest {
    amount_cents: Cents,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/accounts", post(create_account))
        .route("/applications", post(create_application))
        .route("/applications/{id}/verify", post(verify_application))
        .route("/students/active", get(active_students))
        .route("/students/{id}/status", get(student_status))
        .route("/wallets/{sponsor_id}/deposit", post(deposit))
        .route("/wallets/{sponsor_id}", get(wallet))
        .route("/pledges", post(place_pledge))
        .route("/chain", get(chain))
        .route("/chain/verify", get(verify_chain))
        .route("/blocks/{index}", get(block))
        .route("/contracts/{student_id}", get(contract))
        .with_state(state)
}

type ApiResult = Result<Response, ApiError>;

fn ok<T: Serialize>(value: T) -> ApiResult {
    Ok(Json(value).into_response())
}

fn created<T: Serialize>(value: T) -> ApiResult {
    Ok((StatusCode::CREATED, Json(value)).into_response())
}

async fn health(State(state): State<AppState>) -> ApiResult {
    let body = state.read(|s| {
        Ok(json!({
            "status": "ok",
            "node_id": s.node().node_id(),
            "chain_length": s.node().chain().len(),
        }))
    })?;
    ok(body)
}

async fn create_account(State(state): State<AppState>, body: Result<Json<AccountRequest>, JsonRejection>) -> ApiResult {
    let Json(request) = body?;
    created(state.run(|s| s.register_account(request))?)
}

async fn create_application(
    State(state): State<AppState>,
    body: Result<Json<ApplicationRequest>, JsonRejection>,
) -> ApiResult {
    let Json(request) = body?;
    created(state.run(|s| s.submit_application(request))?)
}

async fn verify_application(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    ok(state.run(|s| s.verify_application(&id))?)
}

async fn active_students(State(state): State<AppState>) -> ApiResult {
    ok(state.read(|s| Ok(s.active_students()))?)
}

async fn student_status(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    ok(state.read(|s| s.student_status(&id))?)
}

async fn deposit(
    State(state): State<AppState>,
    Path(sponsor_id): Path<String>,
    body: Result<Json<DepositRequest>, JsonRejection>,
) -> ApiResult {
    let Json(request) = body?;
    ok(state.run(|s| s.deposit(&sponsor_id, request.amount_cents))?)
}

async fn wallet(State(state): State<AppState>, Path(sponsor_id): Path<String>) -> ApiResult {
    ok(state.read(|s| s.wallet(&sponsor_id))?)
}

async fn place_pledge(State(state): State<AppState>, body: Result<Json<PledgeRequest>, JsonRejection>) -> ApiResult {
    let Json(request) = body?;
    created(state.run(|s| s.place_pledge(request))?)
}

async fn chain(State(state): State<AppState>) -> ApiResult {
    ok(state.read(|s| Ok(s.chain()))?)
}

async fn verify_chain(State(state): State<AppState>) -> ApiResult {
    ok(state.read(|s| Ok(s.verify_chain()))?)
}

async fn block(State(state): State<AppState>, Path(index): Path<String>) -> ApiResult {
    let index: u64 = index
        .parse()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "InvalidIndex", format!("{index:?} is not a block index")))?;
    ok(state.read(|s| s.block(index))?)
}

async fn contract(State(state): State<AppState>, Path(student_id): Path<String>) -> ApiResult {
    ok(state.read(|s| s.contract(&student_id))?)
}

//! The cell's uniform RESTful interface: every request is a GET or POST, and
//! every POST body is a canonical signed envelope.
//!
//! Routes: POST /tx (client commits), POST /fwd (inter-cell forwards and
//! outcome confirmations), GET /fingerprint, GET /snapshot (auditor archive
//! download), GET /status, and POST /fault when fault hooks are enabled.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::error::{CellError, ProtocolError};
use crate::protocol::{Envelope, Opcode};
use crate::receipt::Receipt;

use super::{CellNode, FaultBehavior};

/// Running cell server plus its bound URL and background tasks.
pub struct CellHandle {
    pub url: String,
    pub node: Arc<CellNode>,
    server: JoinHandle<()>,
    scheduler: Option<JoinHandle<()>>,
}

impl CellHandle {
    pub fn address(&self) -> crate::protocol::Address {
        self.node.address()
    }

    pub fn shutdown(&self) {
        self.server.abort();
        if let Some(scheduler) = &self.scheduler {
            scheduler.abort();
        }
    }
}

impl Drop for CellHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds the cell's HTTP interface; `auto_report` starts the deadline
/// scheduler (tests drive report stages manually instead).
pub async fn serve_cell(
    node: Arc<CellNode>,
    bind: &str,
    auto_report: bool,
) -> std::io::Result<CellHandle> {
    let listener = TcpListener::bind(bind).await?;
    serve_cell_on(node, listener, auto_report)
}

/// Serves a cell on a pre-bound listener (the deployment builder binds all
/// ports first so every cell's config can carry the full peer URL map).
pub fn serve_cell_on(
    node: Arc<CellNode>,
    listener: TcpListener,
    auto_report: bool,
) -> std::io::Result<CellHandle> {
    let app = Router::new()
        .route("/tx", post(post_tx))
        .route("/fwd", post(post_fwd))
        .route("/fingerprint", get(get_fingerprint))
        .route("/snapshot", get(get_snapshot))
        .route("/status", get(get_status))
        .route("/fault", post(post_fault).get(get_fault))
        .with_state(Arc::clone(&node));
    let url = format!("http://{}", listener.local_addr()?);
    let server = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    let scheduler = auto_report.then(|| node.spawn_scheduler());
    Ok(CellHandle {
        url,
        node,
        server,
        scheduler,
    })
}

fn error_response(status: StatusCode, code: &str, message: impl std::fmt::Display) -> Response {
    (
        status,
        Json(json!({ "error": code, "message": message.to_string() })),
    )
        .into_response()
}

fn cell_error_response(err: CellError) -> Response {
    match &err {
        CellError::Protocol(ProtocolError::StaleTimestamp { .. }) => {
            error_response(StatusCode::BAD_REQUEST, "stale_timestamp", err)
        }
        CellError::Protocol(_) => error_response(StatusCode::BAD_REQUEST, "bad_signature", err),
        CellError::NotSubscribed => error_response(StatusCode::FORBIDDEN, "not_subscribed", err),
        CellError::NotConsortiumMember => {
            error_response(StatusCode::FORBIDDEN, "not_consortium_member", err)
        }
        CellError::UnknownContract(_) => {
            error_response(StatusCode::NOT_FOUND, "unknown_contract", err)
        }
        CellError::Censored => error_response(StatusCode::SERVICE_UNAVAILABLE, "censored", err),
        CellError::UnsupportedOpcode(_) => {
            error_response(StatusCode::BAD_REQUEST, "unsupported_opcode", err)
        }
        CellError::Reverted { .. } => error_response(StatusCode::CONFLICT, "reverted", err),
        _ => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", err),
    }
}

fn offline(node: &CellNode) -> Option<Response> {
    if node.fault_active(FaultBehavior::Offline) {
        Some(error_response(
            StatusCode::SERVICE_UNAVAILABLE,
            "offline",
            "cell offline",
        ))
    } else {
        None
    }
}

async fn post_tx(State(node): State<Arc<CellNode>>, body: String) -> Response {
    if let Some(resp) = offline(&node) {
        return resp;
    }
    let envelope = match Envelope::decode(&body) {
        Ok(env) => env,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "decode", e),
    };
    match node.handle_commit(envelope).await {
        Ok(receipt) => match receipt.envelope.encode() {
            Ok(text) => text.into_response(),
            Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "encode", e),
        },
        Err(err) => cell_error_response(err),
    }
}

async fn post_fwd(State(node): State<Arc<CellNode>>, body: String) -> Response {
    if let Some(resp) = offline(&node) {
        return resp;
    }
    let envelope = match Envelope::decode(&body) {
        Ok(env) => env,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "decode", e),
    };
    match envelope.payload.opcode {
        Opcode::TxForward => match node.handle_forward(envelope).await {
            Ok(confirmation) => match confirmation.envelope.encode() {
                Ok(text) => text.into_response(),
                Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "encode", e),
            },
            Err(err) => cell_error_response(err),
        },
        Opcode::TxConfirm => match node.handle_outcome(envelope).await {
            Ok(()) => Json(json!({ "status": "ok" })).into_response(),
            Err(err) => cell_error_response(err),
        },
        other => error_response(
            StatusCode::BAD_REQUEST,
            "unsupported_opcode",
            format!("{other} not accepted on /fwd"),
        ),
    }
}

#[derive(Deserialize)]
struct CycleQuery {
    cycle: u64,
}

async fn get_fingerprint(
    State(node): State<Arc<CellNode>>,
    Query(query): Query<CycleQuery>,
) -> Response {
    if let Some(resp) = offline(&node) {
        return resp;
    }
    match node.fingerprint_for_cycle(query.cycle) {
        Some(combined) => Json(json!({
            "cell": node.address().to_string(),
            "cycle": query.cycle,
            "combined": combined.to_string(),
        }))
        .into_response(),
        None => error_response(StatusCode::NOT_FOUND, "not_found", "no snapshot for cycle"),
    }
}

async fn get_snapshot(
    State(node): State<Arc<CellNode>>,
    Query(query): Query<CycleQuery>,
) -> Response {
    if let Some(resp) = offline(&node) {
        return resp;
    }
    match node.snapshot_archive(query.cycle) {
        Some(archive) => archive.canonical_string().into_response(),
        None => error_response(StatusCode::NOT_FOUND, "not_found", "no snapshot for cycle"),
    }
}

async fn get_status(State(node): State<Arc<CellNode>>) -> Response {
    if let Some(resp) = offline(&node) {
        return resp;
    }
    Json(node.status()).into_response()
}

#[derive(Deserialize)]
struct FaultRequest {
    behavior: String,
    secs: f64,
}

async fn post_fault(
    State(node): State<Arc<CellNode>>,
    Json(request): Json<FaultRequest>,
) -> Response {
    let behavior: FaultBehavior = match request.behavior.parse() {
        Ok(b) => b,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "unknown_behavior", e),
    };
    match node.inject_fault(behavior, Duration::from_secs_f64(request.secs)) {
        Ok(()) => Json(json!({ "status": "ok", "behavior": behavior.as_str() })).into_response(),
        Err(err) => error_response(StatusCode::FORBIDDEN, "fault_hooks_disabled", err),
    }
}

async fn get_fault(State(node): State<Arc<CellNode>>) -> Response {
    Json(json!({ "active": node.active_faults() })).into_response()
}

/// HTTP client for one cell, used by harness clients and auditors.
#[derive(Clone)]
pub struct CellClient {
    base: String,
    http: reqwest::Client,
}

#[derive(Debug, thiserror::Error)]
pub enum CellClientError {
    #[error("cell unreachable: {0}")]
    Unreachable(String),
    #[error("cell returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("bad response: {0}")]
    BadResponse(String),
}

impl CellClient {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::builder()
                .pool_max_idle_per_host(64)
                .build()
                .expect("reqwest client"),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// Commits a transaction and parses the receipt; `timeout` must cover a
    /// full forwarding round plus queueing.
    pub async fn commit(
        &self,
        envelope: &Envelope,
        timeout: Duration,
    ) -> Result<Receipt, CellClientError> {
        let body = envelope
            .encode()
            .map_err(|e| CellClientError::BadResponse(e.to_string()))?;
        let response = self
            .http
            .post(format!("{}/tx", self.base))
            .timeout(timeout)
            .body(body)
            .send()
            .await
            .map_err(|e| CellClientError::Unreachable(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| CellClientError::BadResponse(e.to_string()))?;
        if !status.is_success() {
            return Err(CellClientError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let envelope =
            Envelope::decode(&text).map_err(|e| CellClientError::BadResponse(e.to_string()))?;
        Receipt::from_envelope(envelope).map_err(|e| CellClientError::BadResponse(e.to_string()))
    }

    pub async fn status(&self) -> Result<serde_json::Value, CellClientError> {
        let response = self
            .http
            .get(format!("{}/status", self.base))
            .timeout(Duration::from_secs(5))
            .send()
            .await
            .map_err(|e| CellClientError::Unreachable(e.to_string()))?;
        response
            .json()
            .await
            .map_err(|e| CellClientError::BadResponse(e.to_string()))
    }

    pub async fn fingerprint(&self, cycle: u64) -> Result<Option<String>, CellClientError> {
        let response = self
            .http
            .get(format!("{}/fingerprint", self.base))
            .query(&[("cycle", cycle.to_string())])
            .timeout(Duration::from_secs(5))
            .send()
            .await
            .map_err(|e| CellClientError::Unreachable(e.to_string()))?;
        if response.status() == StatusCode::NOT_FOUND {
            return Ok(None);
        }
        let value: serde_json::Value = response
            .json()
            .await
            .map_err(|e| CellClientError::BadResponse(e.to_string()))?;
        Ok(value["combined"].as_str().map(str::to_string))
    }

    /// Downloads a snapshot archive; returns the raw canonical text too so
    /// callers can compare bytes.
    pub async fn snapshot(
        &self,
        cycle: u64,
    ) -> Result<Option<(String, crate::snapshot::SnapshotArchive)>, CellClientError> {
        let response = self
            .http
            .get(format!("{}/snapshot", self.base))
            .query(&[("cycle", cycle.to_string())])
            .timeout(Duration::from_secs(10))
            .send()
            .await
            .map_err(|e| CellClientError::Unreachable(e.to_string()))?;
        if response.status() == StatusCode::NOT_FOUND {
            return Ok(None);
        }
        if !response.status().is_success() {
            return Err(CellClientError::Status {
                status: response.status().as_u16(),
                body: String::new(),
            });
        }
        let text = response
            .text()
            .await
            .map_err(|e| CellClientError::BadResponse(e.to_string()))?;
        let archive = crate::snapshot::SnapshotArchive::decode(&text)
            .map_err(|e| CellClientError::BadResponse(e.to_string()))?;
        Ok(Some((text, archive)))
    }

    pub async fn inject_fault(
        &self,
        behavior: &str,
        secs: f64,
    ) -> Result<(), CellClientError> {
        let response = self
            .http
            .post(format!("{}/fault", self.base))
            .json(&json!({ "behavior": behavior, "secs": secs }))
            .timeout(Duration::from_secs(5))
            .send()
            .await
            .map_err(|e| CellClientError::Unreachable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(CellClientError::Status {
                status: response.status().as_u16(),
                body: response.text().await.unwrap_or_default(),
            });
        }
        Ok(())
    }
}

//! HTTP surface of the anchor: the same signed-envelope interface the cells
//! speak. Reports arrive as TX_COMMIT envelopes addressed to the anchor
//! contract; contingency submissions are the censored transaction envelopes
//! themselves.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::clock::Clock;
use crate::error::AnchorError;
use crate::protocol::{
    sign_envelope, verify_envelope, Address, Digest, Envelope, KeyPair, Opcode, Payload,
};

use super::{Anchor, ReportRecord};

struct AnchorService {
    anchor: Arc<Anchor>,
    anchor_address: Address,
    clock: Arc<dyn Clock>,
}

/// Running anchor server plus its bound URL.
pub struct AnchorHandle {
    pub url: String,
    pub anchor: Arc<Anchor>,
    task: JoinHandle<()>,
}

impl AnchorHandle {
    pub fn shutdown(&self) {
        self.task.abort();
    }
}

impl Drop for AnchorHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Serves an anchor on the given listener address (`127.0.0.1:0` for an
/// ephemeral port).
pub async fn serve_anchor(
    anchor: Arc<Anchor>,
    anchor_address: Address,
    clock: Arc<dyn Clock>,
    bind: &str,
) -> std::io::Result<AnchorHandle> {
    let service = Arc::new(AnchorService {
        anchor: Arc::clone(&anchor),
        anchor_address,
        clock,
    });
    let app = Router::new()
        .route("/report", post(post_report).get(get_report))
        .route("/contingency", post(post_contingency).get(get_contingency))
        .route("/status", get(get_status))
        .with_state(service);
    let listener = TcpListener::bind(bind).await?;
    let url = format!("http://{}", listener.local_addr()?);
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok(AnchorHandle { url, anchor, task })
}

fn error_response(status: StatusCode, code: &str, message: impl std::fmt::Display) -> Response {
    (
        status,
        Json(json!({ "error": code, "message": message.to_string() })),
    )
        .into_response()
}

async fn post_report(State(svc): State<Arc<AnchorService>>, body: String) -> Response {
    let envelope = match Envelope::decode(&body) {
        Ok(env) => env,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "decode", e),
    };
    if let Err(e) = verify_envelope(&envelope) {
        return error_response(StatusCode::BAD_REQUEST, "bad_signature", e);
    }
    if envelope.payload.recipient != svc.anchor_address
        || envelope.payload.opcode != Opcode::TxCommit
    {
        return error_response(
            StatusCode::BAD_REQUEST,
            "bad_request",
            "report must be a TX_COMMIT envelope addressed to the anchor contract",
        );
    }
    let data = &envelope.payload.data;
    let cycle = match data.get("cycle").and_then(Value::as_u64) {
        Some(c) => c,
        None => return error_response(StatusCode::BAD_REQUEST, "bad_request", "missing cycle"),
    };
    let fingerprint: Digest = match data
        .get("fingerprint")
        .and_then(Value::as_str)
        .map(str::parse)
    {
        Some(Ok(fp)) => fp,
        _ => return error_response(StatusCode::BAD_REQUEST, "bad_request", "missing fingerprint"),
    };
    match svc.anchor.submit_report(
        envelope.payload.sender,
        cycle,
        fingerprint,
        svc.clock.now(),
    ) {
        Ok(()) => Json(json!({ "status": "ok", "cycle": cycle })).into_response(),
        Err(AnchorError::NotAllowedCell) => {
            error_response(StatusCode::FORBIDDEN, "not_allowed_cell", "unknown cell")
        }
        Err(AnchorError::DuplicateReport) => error_response(
            StatusCode::CONFLICT,
            "duplicate_report",
            "report already recorded for this cell and cycle",
        ),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", e),
    }
}

#[derive(Deserialize)]
struct ReportQuery {
    cell: Option<Address>,
    cycle: u64,
}

async fn get_report(
    State(svc): State<Arc<AnchorService>>,
    Query(query): Query<ReportQuery>,
) -> Response {
    match query.cell {
        Some(cell) => match svc.anchor.get_report(&cell, query.cycle) {
            Some(record) => Json(record).into_response(),
            None => error_response(StatusCode::NOT_FOUND, "not_found", "no such report"),
        },
        None => Json(svc.anchor.reports_for_cycle(query.cycle)).into_response(),
    }
}

async fn post_contingency(State(svc): State<Arc<AnchorService>>, body: String) -> Response {
    let envelope = match Envelope::decode(&body) {
        Ok(env) => env,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "decode", e),
    };
    match svc.anchor.submit_contingency(envelope) {
        Ok(position) => Json(json!({ "position": position })).into_response(),
        Err(AnchorError::Protocol(e)) => {
            error_response(StatusCode::BAD_REQUEST, "bad_signature", e)
        }
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", e),
    }
}

#[derive(Deserialize)]
struct ContingencyQuery {
    #[serde(default)]
    since: u64,
}

#[derive(Serialize, Deserialize)]
struct ContingencyEntry {
    position: u64,
    envelope: String,
}

async fn get_contingency(
    State(svc): State<Arc<AnchorService>>,
    Query(query): Query<ContingencyQuery>,
) -> Response {
    let entries: Vec<ContingencyEntry> = svc
        .anchor
        .fetch_contingency(query.since)
        .into_iter()
        .filter_map(|(position, envelope)| {
            Some(ContingencyEntry {
                position,
                envelope: envelope.encode().ok()?,
            })
        })
        .collect();
    Json(json!({ "entries": entries })).into_response()
}

async fn get_status(State(svc): State<Arc<AnchorService>>) -> Response {
    Json(json!({
        "reports": svc.anchor.report_count(),
        "contingency": svc.anchor.contingency_len(),
        "allowed_cells": svc.anchor.allowed_cells().len(),
    }))
    .into_response()
}

/// Client-side errors distinguishing retryable transport failures from
/// protocol rejections.
#[derive(Debug, thiserror::Error)]
pub enum AnchorClientError {
    #[error("anchor unreachable: {0}")]
    Unreachable(String),
    #[error("duplicate report")]
    Duplicate,
    #[error("cell not allowed")]
    NotAllowed,
    #[error("anchor rejected request: {0}")]
    Rejected(String),
}

/// HTTP client for the anchor endpoints.
#[derive(Clone)]
pub struct AnchorClient {
    base: String,
    anchor_address: Address,
    http: reqwest::Client,
}

impl AnchorClient {
    pub fn new(base: impl Into<String>, anchor_address: Address) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            anchor_address,
            http: reqwest::Client::builder()
                .timeout(std::time::Duration::from_secs(5))
                .build()
                .expect("reqwest client"),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// Signs and submits one fingerprint report.
    pub async fn submit_report(
        &self,
        key: &KeyPair,
        cycle: u64,
        fingerprint: Digest,
        timestamp: u64,
    ) -> Result<(), AnchorClientError> {
        let mut data = BTreeMap::new();
        data.insert("cycle".to_string(), json!(cycle));
        data.insert("fingerprint".to_string(), json!(fingerprint.to_string()));
        let payload = Payload::new(
            key.address(),
            self.anchor_address,
            Opcode::TxCommit,
            timestamp,
            data,
        );
        let envelope = sign_envelope(payload, key)
            .map_err(|e| AnchorClientError::Rejected(e.to_string()))?;
        let body = envelope
            .encode()
            .map_err(|e| AnchorClientError::Rejected(e.to_string()))?;
        let response = self
            .http
            .post(format!("{}/report", self.base))
            .body(body)
            .send()
            .await
            .map_err(|e| AnchorClientError::Unreachable(e.to_string()))?;
        match response.status() {
            StatusCode::OK => Ok(()),
            StatusCode::CONFLICT => Err(AnchorClientError::Duplicate),
            StatusCode::FORBIDDEN => Err(AnchorClientError::NotAllowed),
            status => Err(AnchorClientError::Rejected(format!(
                "{status}: {}",
                response.text().await.unwrap_or_default()
            ))),
        }
    }

    pub async fn get_report(
        &self,
        cell: &Address,
        cycle: u64,
    ) -> Result<Option<ReportRecord>, AnchorClientError> {
        let response = self
            .http
            .get(format!("{}/report", self.base))
            .query(&[("cell", cell.to_string()), ("cycle", cycle.to_string())])
            .send()
            .await
            .map_err(|e| AnchorClientError::Unreachable(e.to_string()))?;
        match response.status() {
            StatusCode::OK => response
                .json()
                .await
                .map(Some)
                .map_err(|e| AnchorClientError::Rejected(e.to_string())),
            StatusCode::NOT_FOUND => Ok(None),
            status => Err(AnchorClientError::Rejected(status.to_string())),
        }
    }

    pub async fn reports_for_cycle(
        &self,
        cycle: u64,
    ) -> Result<Vec<ReportRecord>, AnchorClientError> {
        let response = self
            .http
            .get(format!("{}/report", self.base))
            .query(&[("cycle", cycle.to_string())])
            .send()
            .await
            .map_err(|e| AnchorClientError::Unreachable(e.to_string()))?;
        response
            .json()
            .await
            .map_err(|e| AnchorClientError::Rejected(e.to_string()))
    }

    pub async fn submit_contingency(
        &self,
        envelope: &Envelope,
    ) -> Result<u64, AnchorClientError> {
        let body = envelope
            .encode()
            .map_err(|e| AnchorClientError::Rejected(e.to_string()))?;
        let response = self
            .http
            .post(format!("{}/contingency", self.base))
            .body(body)
            .send()
            .await
            .map_err(|e| AnchorClientError::Unreachable(e.to_string()))?;
        if response.status() != StatusCode::OK {
            return Err(AnchorClientError::Rejected(response.status().to_string()));
        }
        let value: Value = response
            .json()
            .await
            .map_err(|e| AnchorClientError::Rejected(e.to_string()))?;
        value["position"]
            .as_u64()
            .ok_or_else(|| AnchorClientError::Rejected("missing position".into()))
    }

    pub async fn fetch_contingency(
        &self,
        since: u64,
    ) -> Result<Vec<(u64, Envelope)>, AnchorClientError> {
        let response = self
            .http
            .get(format!("{}/contingency", self.base))
            .query(&[("since", since.to_string())])
            .send()
            .await
            .map_err(|e| AnchorClientError::Unreachable(e.to_string()))?;
        let value: Value = response
            .json()
            .await
            .map_err(|e| AnchorClientError::Rejected(e.to_string()))?;
        let mut out = Vec::new();
        if let Some(entries) = value["entries"].as_array() {
            for entry in entries {
                let position = entry["position"].as_u64().unwrap_or_default();
                if let Some(raw) = entry["envelope"].as_str() {
                    if let Ok(envelope) = Envelope::decode(raw) {
                        out.push((position, envelope));
                    }
                }
            }
        }
        Ok(out)
    }
}

//! HTTP/JSON admin API.
//!
//! | route | |
//! |---|---|
//! | `GET /devices` | registered devices |
//! | `GET /devices/{id}/events?since=` | a device's events |
//! | `GET /threats?since=` | threat feed |
//! | `GET /decisions?since=` | decision feed |
//! | `GET /policies` | active document and version |
//! | `PUT /policies` | replace the document |
//! | `POST /permissions` | per-device quick rule |
//! | `POST /quarantine/{device}/{app}/lift` | lift a quarantine |
//! | `GET /metrics/trials` | recorded trial reports |
//! | `POST /metrics/trials` | record one (used by remote benchmark runs) |
//!
//! Feeds return `{"<items>": [...], "cursor": n}`; pass `cursor` back as
//! `since` to poll incrementally.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use super::{PermissionRequest, Service, ServiceError};
use crate::harness::TrialReport;
use crate::policy::{serialize_policy_document, PolicyError};

type Shared = State<Arc<Service>>;

fn error(status: StatusCode, body: Value) -> Response {
    (status, Json(body)).into_response()
}

fn bad_request(detail: impl Into<String>) -> Response {
    error(StatusCode::BAD_REQUEST, json!({"error": "bad_request", "detail": detail.into()}))
}

fn policy_error(err: &PolicyError) -> Response {
    let (kind, column) = match err {
        PolicyError::Parse { column, .. } => ("parse_error", Some(*column)),
        PolicyError::DuplicateRule { .. } => ("duplicate_rule", None),
        PolicyError::InvalidRule { .. } => ("invalid_rule", None),
    };
    error(
        StatusCode::UNPROCESSABLE_ENTITY,
        json!({"error": kind, "detail": err.to_string(), "line": err.line(), "column": column}),
    )
}

fn service_error(err: ServiceError) -> Response {
    match err {
        ServiceError::BadRequest(d) => bad_request(d),
        ServiceError::NotFound(d) => error(StatusCode::NOT_FOUND, json!({"error": "not_found", "detail": d})),
        ServiceError::Policy(e) => policy_error(&e),
        ServiceError::Io(e) => error(StatusCode::INTERNAL_SERVER_ERROR, json!({"error": "storage", "detail": e.to_string()})),
    }
}

fn since(params: &HashMap<String, String>) -> Result<u64, String> {
    let Some(raw) = params.get("since") else {
        return Ok(0);
    };
    match raw.parse::<i64>() {
        Ok(n) if n >= 0 => Ok(n as u64),
        Ok(_) => Err("since must not be negative".into()),
        Err(_) => Err(format!("invalid cursor {raw:?}")),
    }
}

async fn devices(State(svc): Shared) -> Response {
    Json(json!({"devices": svc.devices()})).into_response()
}

async fn device_events(State(svc): Shared, Path(id): Path<String>, Query(q): Query<HashMap<String, String>>) -> Response {
    let since = match since(&q) {
        Ok(s) => s,
        Err(d) => return bad_request(d),
    };
    match svc.list_device_events(&id, since) {
        Some(page) => Json(json!({"events": page.items, "cursor": page.cursor})).into_response(),
        None => error(StatusCode::NOT_FOUND, json!({"error": "not_found", "detail": format!("unknown device `{id}`")})),
    }
}

async fn threats(State(svc): Shared, Query(q): Query<HashMap<String, String>>) -> Response {
    match since(&q) {
        Ok(s) => {
            let page = svc.list_threats(s);
            Json(json!({"threats": page.items, "cursor": page.cursor})).into_response()
        }
        Err(d) => bad_request(d),
    }
}

async fn decisions(State(svc): Shared, Query(q): Query<HashMap<String, String>>) -> Response {
    match since(&q) {
        Ok(s) => {
            let page = svc.list_decisions(s);
            Json(json!({"decisions": page.items, "cursor": page.cursor})).into_response()
        }
        Err(d) => bad_request(d),
    }
}

async fn get_policies(State(svc): Shared) -> Response {
    let set = svc.active_policy();
    Json(json!({"version": set.version(), "document": serialize_policy_document(&set)})).into_response()
}

async fn put_policies(State(svc): Shared, body: Bytes) -> Response {
    let Ok(text) = std::str::from_utf8(&body) else {
        return bad_request("policy document must be UTF-8");
    };
    match svc.put_policy(text) {
        Ok(version) => Json(json!({"version": version})).into_response(),
        Err(e) => service_error(e),
    }
}

async fn permissions(State(svc): Shared, body: Bytes) -> Response {
    let req: PermissionRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(e.to_string()),
    };
    match svc.set_permission(&req) {
        Ok(change) => Json(change).into_response(),
        Err(e) => service_error(e),
    }
}

async fn lift(State(svc): Shared, Path((device, app)): Path<(String, String)>) -> Response {
    match svc.lift_quarantine(&device, &app) {
        Ok(lifted) => Json(json!({"lifted": lifted})).into_response(),
        Err(e) => service_error(e),
    }
}

async fn trial_metrics(State(svc): Shared) -> Response {
    Json(json!({"trials": svc.trials()})).into_response()
}

async fn record_trial(State(svc): Shared, body: Bytes) -> Response {
    match serde_json::from_slice::<TrialReport>(&body) {
        Ok(report) => {
            svc.record_trial(report);
            Json(json!({"trials": svc.trials().len()})).into_response()
        }
        Err(e) => bad_request(e.to_string()),
    }
}

async fn not_found() -> Response {
    error(StatusCode::NOT_FOUND, json!({"error": "not_found", "detail": "unknown route"}))
}

/// Admin routes; `ui_dir`, when given, is served under `/ui`.
pub fn router(service: Arc<Service>, ui_dir: Option<PathBuf>) -> Router {
    let mut router = Router::new()
        .route("/devices", get(devices))
        .route("/devices/{id}/events", get(device_events))
        .route("/threats", get(threats))
        .route("/decisions", get(decisions))
        .route("/policies", get(get_policies).put(put_policies))
        .route("/permissions", post(permissions))
        .route("/quarantine/{device}/{app}/lift", post(lift))
        .route("/metrics/trials", get(trial_metrics).post(record_trial));
    if let Some(dir) = ui_dir {
        router = router.nest_service("/ui", ServeDir::new(dir));
    }
    router.fallback(not_found).with_state(service)
}

//! HTTP/1.1 JSON API.
//!
//! | route | auth |
//! |---|---|
//! | `POST /api/v1/reports` | signed |
//! | `GET /api/v1/schema` | open |
//! | `GET /api/v1/reports/public?page=&per_page=` | open |
//! | `GET /api/v1/aggregates/{name}` | open |
//! | `GET /api/v1/export?format=jsonl\|csv` | open |

use std::collections::HashMap;
use std::sync::Arc;

use anonreport_core::export::{write_csv, write_jsonl};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::aggregates::{self, AggregateError};
use crate::auth::{AuthHeaders, RejectReason, HEADER_MAC, HEADER_NONCE, HEADER_TIMESTAMP};
use crate::service::{Service, SubmitError};

pub const MAX_PER_PAGE: usize = 1000;
pub const DEFAULT_PER_PAGE: usize = 100;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/v1/reports", post(submit))
        .route("/api/v1/schema", get(schema))
        .route("/api/v1/reports/public", get(public_reports))
        .route("/api/v1/aggregates/{name}", get(aggregate))
        .route("/api/v1/export", get(export))
        .with_state(service)
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": code, "message": message.into() }))).into_response()
}

fn header_str<'a>(headers: &'a HeaderMap, name: &str) -> Option<&'a str> {
    headers.get(name).and_then(|v| v.to_str().ok())
}

async fn submit(State(svc): State<Arc<Service>>, headers: HeaderMap, body: Bytes) -> Response {
    let result = tokio::task::spawn_blocking(move || {
        let auth = AuthHeaders {
            timestamp: header_str(&headers, HEADER_TIMESTAMP),
            nonce: header_str(&headers, HEADER_NONCE),
            mac: header_str(&headers, HEADER_MAC),
        };
        svc.submit(auth, &body)
    })
    .await;
    match result {
        Ok(Ok(status)) => {
            let code = match status {
                crate::service::SubmitStatus::Pending => StatusCode::ACCEPTED,
                crate::service::SubmitStatus::Released => StatusCode::OK,
            };
            (code, Json(json!({ "status": status.as_str() }))).into_response()
        }
        Ok(Err(SubmitError::Auth(RejectReason::Overloaded))) => {
            error(StatusCode::SERVICE_UNAVAILABLE, RejectReason::Overloaded.code(), "try again later")
        }
        Ok(Err(SubmitError::Auth(reason))) => error(StatusCode::UNAUTHORIZED, reason.code(), "authentication failed"),
        Ok(Err(SubmitError::Malformed(m))) => error(StatusCode::BAD_REQUEST, "malformed", m),
        Ok(Err(SubmitError::Invalid(violations))) => {
            let items: Vec<_> = violations
                .iter()
                .map(|v| json!({ "code": v.code(), "message": v.to_string() }))
                .collect();
            (StatusCode::BAD_REQUEST, Json(json!({ "error": "invalid_submission", "violations": items })))
                .into_response()
        }
        Ok(Err(SubmitError::Storage(e))) => {
            tracing::error!(error = %e, "store write failed");
            error(StatusCode::SERVICE_UNAVAILABLE, "storage_unavailable", "report not stored")
        }
        Err(e) => {
            tracing::error!(error = %e, "submit task failed");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error")
        }
    }
}

async fn schema(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.catalog().as_ref()).into_response()
}

#[derive(Deserialize)]
struct PageQuery {
    page: Option<String>,
    per_page: Option<String>,
}

async fn public_reports(State(svc): State<Arc<Service>>, Query(q): Query<PageQuery>) -> Response {
    let parse = |v: Option<String>, default: usize| v.map_or(Ok(default), |s| s.parse::<usize>());
    let (Ok(page), Ok(per_page)) = (parse(q.page, 1), parse(q.per_page, DEFAULT_PER_PAGE)) else {
        return error(StatusCode::BAD_REQUEST, "bad_parameter", "page and per_page must be positive integers");
    };
    if page == 0 || per_page == 0 || per_page > MAX_PER_PAGE {
        return error(
            StatusCode::BAD_REQUEST,
            "bad_parameter",
            format!("page must be ≥ 1 and per_page in 1..={MAX_PER_PAGE}"),
        );
    }
    let all = svc.public();
    let start = (page - 1).saturating_mul(per_page).min(all.len());
    let end = start.saturating_add(per_page).min(all.len());
    Json(json!({
        "page": page,
        "per_page": per_page,
        "total": all.len(),
        "reports": &all[start..end],
    }))
    .into_response()
}

async fn aggregate(
    State(svc): State<Arc<Service>>,
    Path(name): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Response {
    let reports = svc.public();
    let csv = params.get("format").is_some_and(|f| f == "csv");
    match aggregates::compute(&name, &params, &reports, svc.catalog()) {
        Ok(a) if csv => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], a.csv).into_response(),
        Ok(a) => Json(a.json).into_response(),
        Err(e @ AggregateError::Unknown(_)) => error(StatusCode::NOT_FOUND, "unknown_aggregate", e.to_string()),
        Err(e) => error(StatusCode::BAD_REQUEST, "bad_parameter", e.to_string()),
    }
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export(State(svc): State<Arc<Service>>, Query(q): Query<ExportQuery>) -> Response {
    let reports = svc.public();
    let mut buf = Vec::new();
    let (content_type, result) = match q.format.as_deref().unwrap_or("jsonl") {
        "jsonl" | "json" => ("application/x-ndjson", write_jsonl(&mut buf, reports.iter())),
        "csv" => ("text/csv; charset=utf-8", write_csv(&mut buf, reports.iter())),
        other => return error(StatusCode::BAD_REQUEST, "bad_parameter", format!("unknown format {other:?}")),
    };
    match result {
        Ok(()) => ([(header::CONTENT_TYPE, content_type)], buf).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

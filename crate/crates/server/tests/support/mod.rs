#![allow(dead_code)]

use std::sync::Arc;

use anonreport_core::release::{LevelThresholds, ReleaseBatch, ReleasePolicy};
use anonreport_core::{Catalog, Granularity, PublicReport, Timestamp};
use anonreport_server::auth::{sign, AuthConfig};
use anonreport_server::service::SubmitStatus;
use anonreport_server::{http, Clock, ManualClock, MemoryStore, ReportStore, Service};
use axum::body::{to_bytes, Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const KEY: &[u8] = b"test shared key";
/// 2014-03-01 12:34:56 UTC
pub const START: i64 = 1_393_677_296;

pub struct Harness {
    pub svc: Arc<Service>,
    pub clock: Arc<ManualClock>,
    pub store: Arc<dyn ReportStore>,
    pub router: Router,
}

impl Harness {
    pub fn new(k: u32, escalation_after: Option<u32>) -> Self {
        Self::with_store(k, escalation_after, Arc::new(MemoryStore::new()))
    }

    pub fn with_store(k: u32, escalation_after: Option<u32>, store: Arc<dyn ReportStore>) -> Self {
        let policy = ReleasePolicy { k: LevelThresholds::uniform(k), granularity: Granularity::DAY, escalation_after };
        let clock = Arc::new(ManualClock::new(Timestamp::from_unix(START)));
        let auth = AuthConfig::new(KEY.to_vec(), 300, 10_000).unwrap();
        let svc = Arc::new(
            Service::new(Arc::new(Catalog::builtin()), policy, auth, store.clone(), clock.clone(), Some(7)).unwrap(),
        );
        let router = http::router(svc.clone());
        Self { svc, clock, store, router }
    }

    pub fn now(&self) -> i64 {
        self.clock.now().unix()
    }

    /// Signs and posts `body`.
    pub async fn post(&self, body: &[u8]) -> (StatusCode, Value) {
        let h = sign(KEY, self.now(), body);
        self.post_with(body, &h.pairs()).await
    }

    pub async fn post_with(&self, body: &[u8], headers: &[(&str, &str)]) -> (StatusCode, Value) {
        let mut req = Request::post("/api/v1/reports").header("content-type", "application/json");
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let resp = self.router.clone().oneshot(req.body(Body::from(body.to_vec())).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, String, Bytes) {
        let resp = self.router.clone().oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
        let status = resp.status();
        let ct = resp
            .headers()
            .get("content-type")
            .map(|v| v.to_str().unwrap().to_owned())
            .unwrap_or_default();
        (status, ct, to_bytes(resp.into_body(), usize::MAX).await.unwrap())
    }

    pub async fn get_json(&self, uri: &str) -> Value {
        let (status, _, bytes) = self.get(uri).await;
        assert_eq!(status, StatusCode::OK, "{uri}: {}", String::from_utf8_lossy(&bytes));
        serde_json::from_slice(&bytes).unwrap()
    }

    /// Submits through the service directly, bypassing HTTP.
    pub fn submit(&self, body: &[u8]) -> SubmitStatus {
        let h = sign(KEY, self.now(), body);
        self.svc.submit(h.as_auth_headers(), body).unwrap()
    }
}

pub fn body_at(tags: &[&str], designation: Value) -> Vec<u8> {
    serde_json::to_vec(&json!({
        "schema_version": Catalog::builtin().version(),
        "tags": tags,
        "designation": designation,
    }))
    .unwrap()
}

pub fn bloomington() -> Value {
    json!({"country": "USA", "province": "Indiana", "city": "Bloomington", "resolution": "city"})
}

pub fn indiana() -> Value {
    json!({"country": "USA", "province": "Indiana", "resolution": "province"})
}

pub fn italy() -> Value {
    json!({"country": "Italy", "resolution": "country"})
}

pub fn valid_body() -> Vec<u8> {
    body_at(&["unwanted.type.stalking", "sa.activity.kissing"], bloomington())
}

/// Publishes `reports` straight into `store`, one batch per
/// (designation, release day).
pub fn publish(store: &dyn ReportStore, reports: &[PublicReport]) {
    let mut groups: std::collections::BTreeMap<(String, i64), ReleaseBatch> = Default::default();
    for r in reports {
        let key = (format!("{:?}", r.designation), r.released_at.unix());
        groups
            .entry(key)
            .or_insert_with(|| ReleaseBatch { designation: r.designation.clone(), released_at: r.released_at, reports: vec![] })
            .reports
            .push(r.clone());
    }
    for b in groups.values() {
        store.record_release(b).unwrap();
    }
}

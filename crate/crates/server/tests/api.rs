//! The HTTP surface: status codes, auth, no-leak guarantees, exports and
//! aggregate equivalence with offline analytics.

mod support;

use std::collections::{BTreeSet, HashMap};

use anonreport_core::analytics::{self, csv_out, GeoLevel, TagFilter};
use anonreport_core::export::read_jsonl;
use anonreport_core::fixture::{gen_fixture, FixtureSpec};
use anonreport_core::{Catalog, GeoDesignation, Granularity, PublicReport};
use anonreport_server::auth::{compute_mac, sign, sign_with_nonce, HEADER_MAC, HEADER_NONCE, HEADER_TIMESTAMP};
use anonreport_server::service::SubmitStatus;
use axum::http::StatusCode;
use serde_json::{json, Value};
use support::*;

#[tokio::test]
async fn pending_then_released_at_k5() {
    let h = Harness::new(5, None);
    for _ in 0..4 {
        let (status, body) = h.post(&valid_body()).await;
        assert_eq!(status, StatusCode::ACCEPTED);
        assert_eq!(body, json!({"status": "pending"}));
    }
    assert!(h.svc.public().is_empty());
    let (status, body) = h.post(&valid_body()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "released"}));

    let public = h.svc.public();
    assert_eq!(public.len(), 5);
    let day = Granularity::DAY.truncate(anonreport_core::Timestamp::from_unix(START));
    assert!(public.iter().all(|r| r.released_at == day));
    assert_eq!(h.svc.total_pending(), 0);
}

#[tokio::test]
async fn coordinate_fields_are_rejected() {
    let h = Harness::new(1, None);
    let mut with_lat: Value = serde_json::from_slice(&valid_body()).unwrap();
    with_lat["lat"] = json!(39.16);
    let mut nested = with_lat.clone();
    nested.as_object_mut().unwrap().remove("lat");
    nested["designation"]["lon"] = json!(-86.52);
    for v in [with_lat, nested] {
        let (status, body) = h.post(&serde_json::to_vec(&v).unwrap()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(body["error"], "invalid_submission");
        let codes: Vec<&str> = body["violations"].as_array().unwrap().iter().map(|v| v["code"].as_str().unwrap()).collect();
        assert!(codes.contains(&"unknown_field"), "{codes:?}");
    }
    assert!(h.svc.public().is_empty());
    assert_eq!(h.svc.total_pending(), 0);
}

#[tokio::test]
async fn validation_failures() {
    let h = Harness::new(1, None);
    let (status, body) = h.post(b"not json").await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("malformed")));

    let cases = [
        (body_at(&["no.such.tag"], bloomington()), "unknown_tag"),
        (body_at(&[], bloomington()), "empty_selections"),
        (body_at(&["sa.partners.alone", "sa.partners.one-partner"], bloomington()), "single_select_exceeded"),
        (body_at(&["sa.activity.kissing"], json!({"country": "USA", "resolution": "city"})), "invalid_designation"),
    ];
    for (b, code) in cases {
        let (status, body) = h.post(&b).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{code}");
        let codes: Vec<&str> = body["violations"].as_array().unwrap().iter().map(|v| v["code"].as_str().unwrap()).collect();
        assert!(codes.contains(&code), "{code}: {codes:?}");
    }
    let mut stale_schema: Value = serde_json::from_slice(&valid_body()).unwrap();
    stale_schema["schema_version"] = json!("0000000000000000");
    let (_, body) = h.post(&serde_json::to_vec(&stale_schema).unwrap()).await;
    assert_eq!(body["violations"][0]["code"], "schema_version_mismatch");
    assert!(h.svc.public().is_empty());
}

#[tokio::test]
async fn auth_rejections_carry_reason_codes() {
    let h = Harness::new(1, None);
    let body = valid_body();
    let now = h.now();

    let (status, v) = h.post_with(&body, &[]).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::UNAUTHORIZED, Some("MALFORMED_AUTH")));

    let short = sign_with_nonce(KEY, now, "abcd", &body);
    let (_, v) = h.post_with(&body, &short.pairs()).await;
    assert_eq!(v["error"], "MALFORMED_AUTH");

    let forged = sign(b"some other key", now, &body);
    let (_, v) = h.post_with(&body, &forged.pairs()).await;
    assert_eq!(v["error"], "BAD_MAC");

    let signed = sign(KEY, now, &body);
    let mut tampered = body.clone();
    tampered.push(b' ');
    let (_, v) = h.post_with(&tampered, &signed.pairs()).await;
    assert_eq!(v["error"], "BAD_MAC");

    for skew in [-301, 301] {
        let stale = sign(KEY, now + skew, &body);
        let (status, v) = h.post_with(&body, &stale.pairs()).await;
        assert_eq!((status, v["error"].as_str()), (StatusCode::UNAUTHORIZED, Some("STALE")), "skew {skew}");
    }
    let edge = sign(KEY, now - 300, &body);
    assert_eq!(h.post_with(&body, &edge.pairs()).await.0, StatusCode::OK);

    let (status, _) = h.post_with(&body, &signed.pairs()).await;
    assert_eq!(status, StatusCode::OK);
    let (status, v) = h.post_with(&body, &signed.pairs()).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::UNAUTHORIZED, Some("REPLAY")));

    // hand-assembled headers agree with the signing helper
    let nonce = "00112233445566778899aabbccddeeff";
    let ts = now.to_string();
    let mac = compute_mac(KEY, &ts, nonce, &body);
    let (status, _) = h.post_with(&body, &[(HEADER_TIMESTAMP, &ts), (HEADER_NONCE, nonce), (HEADER_MAC, &mac)]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(h.svc.public().len(), 3);
}

#[tokio::test]
async fn full_nonce_cache_answers_503() {
    let policy = anonreport_core::release::ReleasePolicy::with_k(1);
    let auth = anonreport_server::auth::AuthConfig::new(KEY.to_vec(), 300, 2).unwrap();
    let clock = std::sync::Arc::new(anonreport_server::ManualClock::new(anonreport_core::Timestamp::from_unix(START)));
    let svc = std::sync::Arc::new(
        anonreport_server::Service::new(
            std::sync::Arc::new(Catalog::builtin()),
            policy,
            auth,
            std::sync::Arc::new(anonreport_server::MemoryStore::new()),
            clock.clone(),
            None,
        )
        .unwrap(),
    );
    let body = valid_body();
    for _ in 0..2 {
        let s = sign(KEY, START, &body);
        assert_eq!(svc.submit(s.as_auth_headers(), &body).unwrap(), SubmitStatus::Released);
    }
    let router = anonreport_server::http::router(svc.clone());
    let s = sign(KEY, START, &body);
    let mut req = axum::http::Request::post("/api/v1/reports");
    for (k, v) in s.pairs() {
        req = req.header(k, v);
    }
    use tower::ServiceExt;
    let resp = router.clone().oneshot(req.body(axum::body::Body::from(body.clone())).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::SERVICE_UNAVAILABLE);
    // once the window passes the entries expire and the cache has room again
    clock.advance(301);
    let s = sign(KEY, START + 301, &body);
    assert_eq!(svc.submit(s.as_auth_headers(), &body).unwrap(), SubmitStatus::Released);
}

#[tokio::test]
async fn reads_are_open_and_only_submit_mutates() {
    let h = Harness::new(5, None);
    for uri in [
        "/api/v1/schema",
        "/api/v1/reports/public",
        "/api/v1/aggregates/tag-counts",
        "/api/v1/export",
        "/api/v1/export?format=csv",
    ] {
        assert_eq!(h.get(uri).await.0, StatusCode::OK, "{uri}");
    }
    let schema: Value = h.get_json("/api/v1/schema").await;
    assert_eq!(schema, serde_json::to_value(Catalog::builtin()).unwrap());

    use tower::ServiceExt;
    for (method, uri) in [
        ("POST", "/api/v1/export"),
        ("POST", "/api/v1/schema"),
        ("DELETE", "/api/v1/reports"),
        ("PUT", "/api/v1/reports"),
        ("POST", "/api/v1/aggregates/tag-counts"),
        ("GET", "/api/v1/reports"),
    ] {
        let req = axum::http::Request::builder().method(method).uri(uri).body(axum::body::Body::empty()).unwrap();
        let status = h.router.clone().oneshot(req).await.unwrap().status();
        assert_eq!(status, StatusCode::METHOD_NOT_ALLOWED, "{method} {uri}");
    }
    for uri in ["/api/v1/pending", "/api/v1/admin", "/api/v1/reports/pending"] {
        assert_eq!(h.get(uri).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
}

const FORBIDDEN_KEYS: [&str; 14] = [
    "pending",
    "pending_count",
    "pending_reports",
    "queued",
    "submitted_at",
    "received_at",
    "arrived_at",
    "created_at",
    "timestamp",
    "user",
    "user_id",
    "ip",
    "nonce",
    "session",
];

fn keys(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                out.insert(k.clone());
                keys(v, out);
            }
        }
        Value::Array(a) => a.iter().for_each(|v| keys(v, out)),
        _ => {}
    }
}

fn read_surface() -> Vec<String> {
    let mut uris: Vec<String> = vec![
        "/api/v1/schema".into(),
        "/api/v1/reports/public".into(),
        "/api/v1/reports/public?page=2&per_page=2".into(),
        "/api/v1/export".into(),
        "/api/v1/export?format=csv".into(),
    ];
    for name in anonreport_server::aggregates::NAMES {
        let q = match name {
            "cooccurrence" => "?a=sa.relationship&b=sa.activity",
            "geography" => "?level=province&country=usa",
            _ => "?",
        };
        uris.push(format!("/api/v1/aggregates/{name}{q}"));
        uris.push(format!("/api/v1/aggregates/{name}{q}&format=csv"));
    }
    uris.push("/api/v1/aggregates/tag-counts?country=usa&province=indiana&city=bloomington".into());
    uris
}

async fn snapshot(h: &Harness) -> Vec<(String, StatusCode, Vec<u8>)> {
    let mut out = Vec::new();
    for uri in read_surface() {
        let (status, _, bytes) = h.get(&uri).await;
        out.push((uri, status, bytes.to_vec()));
    }
    out
}

#[tokio::test]
async fn pending_reports_leave_no_trace_in_any_response() {
    let h = Harness::new(5, None);
    for _ in 0..5 {
        h.submit(&valid_body());
    }
    let before = snapshot(&h).await;
    for (uri, status, bytes) in &before {
        assert_eq!(*status, StatusCode::OK, "{uri}");
        if let Ok(v) = serde_json::from_slice::<Value>(bytes) {
            let mut found = BTreeSet::new();
            keys(&v, &mut found);
            for k in FORBIDDEN_KEYS {
                assert!(!found.contains(k), "{uri} exposes {k}");
            }
        }
    }

    // four pending reports in the same city, four elsewhere, then an
    // escalation-free maintenance pass: nothing observable may change
    for _ in 0..4 {
        let (_, v) = h.post(&valid_body()).await;
        assert_eq!(v.as_object().unwrap().keys().collect::<Vec<_>>(), ["status"]);
        h.post(&body_at(&["sa.activity.kissing"], italy())).await;
    }
    h.svc.run_maintenance().unwrap();
    assert_eq!(h.svc.total_pending(), 8);
    let after = snapshot(&h).await;
    for (a, b) in before.iter().zip(&after) {
        assert_eq!(a, b, "{} changed while reports were pending", a.0);
    }
}

#[tokio::test]
async fn export_empty_store() {
    let h = Harness::new(5, None);
    let (status, ct, bytes) = h.get("/api/v1/export").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ct, "application/x-ndjson");
    assert!(bytes.is_empty());
    assert!(read_jsonl(&bytes[..]).unwrap().is_empty());

    let (_, ct, csv) = h.get("/api/v1/export?format=csv").await;
    assert!(ct.starts_with("text/csv"));
    let text = String::from_utf8(csv.to_vec()).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("report_id,"));
    assert!(anonreport_core::export::read_csv(text.as_bytes()).unwrap().is_empty());

    assert_eq!(h.get("/api/v1/export?format=xml").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn export_after_one_batch_and_replay_stability() {
    let h = Harness::new(5, None);
    for _ in 0..5 {
        h.post(&valid_body()).await;
    }
    let first = h.get("/api/v1/export").await.2;
    let second = h.get("/api/v1/export").await.2;
    assert_eq!(first, second);
    assert_eq!(h.get("/api/v1/export?format=csv").await.2, h.get("/api/v1/export?format=csv").await.2);

    let reports = read_jsonl(&first[..]).unwrap();
    assert_eq!(reports.len(), 5);
    let stamps: BTreeSet<_> = reports.iter().map(|r| r.released_at).collect();
    assert_eq!(stamps.len(), 1);
    let first_line: Value = serde_json::from_slice(first.split(|&b| b == b'\n').next().unwrap()).unwrap();
    let mut line_keys: Vec<&str> = first_line.as_object().unwrap().keys().map(String::as_str).collect();
    line_keys.sort();
    assert_eq!(line_keys, ["city", "country", "province", "released_at", "report_id", "resolution", "tags"]);
    assert_eq!(first_line["released_at"], "2014-03-01");

    let csv = h.get("/api/v1/export?format=csv").await.2;
    assert_eq!(anonreport_core::export::read_csv(&csv[..]).unwrap(), reports);
}

fn fixture_reports() -> Vec<PublicReport> {
    let spec: FixtureSpec = serde_json::from_value(json!({
        "total_reports": 1500,
        "countries": [
            {"name": "USA", "count": 1000, "provinces": [
                {"name": "Indiana", "count": 600, "cities": [{"name": "Bloomington", "count": 300}]},
                {"name": "Ohio", "count": 100, "cities": []}
            ]},
            {"name": "Italy", "count": 200, "provinces": []}
        ],
        "filler_countries": 5,
        "surveys": [{"survey": "Sexual Activity", "count": 1200}, {"survey": "Flirting", "count": 400}],
        "tags_per_report": {"mean": 12.0},
        "pairs": []
    }))
    .unwrap();
    gen_fixture(&spec, &Catalog::builtin(), 11).unwrap().reports
}

#[tokio::test]
async fn api_aggregates_equal_offline_analytics_on_export() {
    let h = Harness::new(5, None);
    publish(h.store.as_ref(), &fixture_reports());
    let export = h.get("/api/v1/export").await.2;
    let offline = read_jsonl(&export[..]).unwrap();
    assert_eq!(offline.len(), 1500);
    let catalog = Catalog::builtin();

    let counts = analytics::tag_counts(&offline, &TagFilter::all());
    assert_eq!(h.get_json("/api/v1/aggregates/tag-counts").await, json!({ "counts": counts }));
    let csv = h.get("/api/v1/aggregates/tag-counts?format=csv").await.2;
    assert_eq!(csv, csv_out::tag_counts(&counts).as_bytes());

    let indiana = GeoDesignation::province("usa", "indiana").unwrap();
    let scoped = analytics::tag_counts(&offline, &TagFilter::all().within(indiana).survey(&catalog, "sexual activity").unwrap());
    assert_eq!(
        h.get_json("/api/v1/aggregates/tag-counts?country=USA&province=Indiana&survey=Sexual%20Activity").await,
        json!({ "counts": scoped })
    );

    let table = analytics::cooccurrence(&offline, &catalog, &"sa.relationship".into(), &"sa.activity".into()).unwrap();
    let api = h.get_json("/api/v1/aggregates/cooccurrence?a=sa.relationship&b=sa.activity").await;
    assert_eq!(api["counts"], serde_json::to_value(&table).unwrap()["counts"]);
    assert_eq!(api["row_percentages"], serde_json::to_value(table.row_percentages()).unwrap());

    let geo = analytics::geography_counts(&offline, &GeoLevel::Country);
    assert_eq!(h.get_json("/api/v1/aggregates/geography").await, json!({ "rows": geo }));
    let states = analytics::geography_counts(&offline, &GeoLevel::ProvinceWithin("usa".into()));
    assert_eq!(h.get_json("/api/v1/aggregates/geography?level=province&country=usa").await, json!({ "rows": states }));

    let spr = analytics::surveys_per_report(&offline, &catalog).unwrap();
    assert_eq!(h.get_json("/api/v1/aggregates/surveys-per-report").await["histogram"], serde_json::to_value(&spr).unwrap());
    let tpr = analytics::tags_per_report(&offline);
    let api = h.get_json("/api/v1/aggregates/tags-per-report").await;
    assert_eq!(api["mean"], serde_json::to_value(&tpr).unwrap()["mean"]);
}

#[tokio::test]
async fn aggregate_errors() {
    let h = Harness::new(5, None);
    let (status, _, body) = h.get("/api/v1/aggregates/astrology").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["error"], "unknown_aggregate");
    for uri in [
        "/api/v1/aggregates/cooccurrence?a=sa.relationship",
        "/api/v1/aggregates/geometric-null?n_max=0",
        "/api/v1/aggregates/geography?level=planet",
        "/api/v1/aggregates/tag-counts?survey=Astrology",
    ] {
        assert_eq!(h.get(uri).await.0, StatusCode::BAD_REQUEST, "{uri}");
    }
}

#[tokio::test]
async fn pagination_follows_listing_order() {
    let h = Harness::new(5, None);
    let mut reports = fixture_reports();
    reports.truncate(23);
    publish(h.store.as_ref(), &reports);
    let mut expected = reports.clone();
    anonreport_core::export::sort_for_listing(&mut expected);

    let mut paged: Vec<PublicReport> = Vec::new();
    for page in 1..=4 {
        let v = h.get_json(&format!("/api/v1/reports/public?page={page}&per_page=10")).await;
        assert_eq!(v["total"], 23);
        assert_eq!(v["page"], page);
        let items: Vec<PublicReport> = serde_json::from_value(v["reports"].clone()).unwrap();
        assert_eq!(items.len(), [10, 10, 3, 0][page - 1]);
        paged.extend(items);
    }
    assert_eq!(paged, expected);
    let keys: Vec<_> = paged.iter().map(|r| r.listing_key()).collect();
    assert!(keys.windows(2).all(|w| w[0] <= w[1]));

    for q in ["page=0", "per_page=0", "per_page=1001", "page=x", "per_page=-1"] {
        assert_eq!(h.get(&format!("/api/v1/reports/public?{q}")).await.0, StatusCode::BAD_REQUEST, "{q}");
    }
    assert_eq!(h.get_json("/api/v1/reports/public").await["per_page"], 100);
}

#[tokio::test]
async fn stale_pools_escalate_through_maintenance() {
    let h = Harness::new(5, Some(1));
    for _ in 0..2 {
        h.submit(&valid_body());
    }
    for _ in 0..3 {
        h.submit(&body_at(&["sa.activity.kissing"], indiana()));
    }
    assert_eq!(h.svc.run_maintenance().unwrap().moved, 0);
    h.clock.advance(2 * 86_400);
    let summary = h.svc.run_maintenance().unwrap();
    assert_eq!(summary.moved, 2);
    assert_eq!(summary.released_batches, 1);
    let public = h.svc.public();
    assert_eq!(public.len(), 5);
    let indiana = GeoDesignation::province("usa", "indiana").unwrap();
    assert!(public.iter().all(|r| r.designation == indiana));
}

#[test]
fn concurrent_submissions_never_publish_below_k() {
    let h = Harness::new(5, None);
    let places = [bloomington(), indiana(), italy()];
    std::thread::scope(|s| {
        for t in 0..8 {
            let h = &h;
            let places = &places;
            s.spawn(move || {
                for i in 0..50 {
                    let status = h.submit(&body_at(&["sa.activity.kissing"], places[(t + i) % 3].clone()));
                    assert!(matches!(status, SubmitStatus::Pending | SubmitStatus::Released));
                }
            });
        }
    });
    let public = h.svc.public();
    assert_eq!(public.len() + h.svc.total_pending(), 400);
    let mut per_place: HashMap<&GeoDesignation, usize> = HashMap::new();
    for r in public.iter() {
        *per_place.entry(&r.designation).or_default() += 1;
    }
    for (d, n) in per_place {
        assert!(n >= 5);
        assert!(h.svc.pending_count(d) < 5);
    }
    let ids: BTreeSet<_> = public.iter().map(|r| &r.report_id).collect();
    assert_eq!(ids.len(), public.len());
}

//! Reverse-geocoding endpoint, served separately from the report API so
//! coordinates and report content never travel in the same request.
//!
//! `GET /reverse?lat=..&lon=..` answers `{"country", "province", "city"}`,
//! 404 for uncovered locations and 400 for invalid coordinates. This is the
//! wire format [`anonreport_core::geo::HttpGeocoder`] consumes.

use std::future::Future;
use std::sync::Arc;

use anonreport_core::geo::{Coordinates, GeocodeError, Geocoder};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

pub fn geocoder_router(geocoder: Arc<dyn Geocoder>) -> Router {
    Router::new().route("/reverse", get(reverse)).with_state(geocoder)
}

/// Serves [`geocoder_router`] on `listener` until `shutdown` resolves.
pub async fn serve_geocoder(
    listener: tokio::net::TcpListener,
    geocoder: Arc<dyn Geocoder>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "geocoder serving");
    axum::serve(listener, geocoder_router(geocoder)).with_graceful_shutdown(shutdown).await
}

#[derive(Deserialize)]
struct ReverseQuery {
    lat: f64,
    lon: f64,
}

async fn reverse(State(geocoder): State<Arc<dyn Geocoder>>, Query(q): Query<ReverseQuery>) -> Response {
    let coords = match Coordinates::new(q.lat, q.lon) {
        Ok(c) => c,
        Err(e) => return (StatusCode::BAD_REQUEST, Json(json!({ "error": e.to_string() }))).into_response(),
    };
    match geocoder.lookup(coords) {
        Ok(d) => Json(json!({
            "country": d.country_name(),
            "province": d.province_name(),
            "city": d.city_name(),
        }))
        .into_response(),
        Err(GeocodeError::UnknownLocation) => {
            (StatusCode::NOT_FOUND, Json(json!({ "error": "unknown location" }))).into_response()
        }
        Err(e) => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "error": e.to_string() }))).into_response(),
    }
}

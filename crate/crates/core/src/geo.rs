//! Coarse geography: the country / province / city hierarchy, resolution
//! coarsening, and the reverse-geocoding channel.
//!
//! [`Coordinates`] exist only on the geocoding side of the system. Report
//! types carry a [`GeoDesignation`], which has no numeric content at all
//! (designation components are rejected if they contain digits).

use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Location coarseness, ordered from coarsest to finest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Country,
    Province,
    City,
}

impl Resolution {
    pub const ALL: [Resolution; 3] = [Resolution::Country, Resolution::Province, Resolution::City];

    /// One level coarser, or `None` at country level.
    pub fn parent(self) -> Option<Resolution> {
        match self {
            Resolution::Country => None,
            Resolution::Province => Some(Resolution::Country),
            Resolution::City => Some(Resolution::Province),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Resolution::Country => "country",
            Resolution::Province => "province",
            Resolution::City => "city",
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Resolution {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "country" => Ok(Resolution::Country),
            "province" | "state" => Ok(Resolution::Province),
            "city" => Ok(Resolution::City),
            other => Err(GeoError::UnknownResolution(other.to_owned())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("{field} must not be empty")]
    EmptyComponent { field: &'static str },
    #[error("{field} must not contain digits")]
    NumericComponent { field: &'static str },
    #[error("city requires a province")]
    CityWithoutProvince,
    #[error("resolution {resolution} does not match the supplied fields")]
    ResolutionMismatch { resolution: Resolution },
    #[error("cannot refine {from} designation to {to}")]
    FinerThanSource { from: Resolution, to: Resolution },
    #[error("unknown resolution {0:?}")]
    UnknownResolution(String),
}

/// A raw device location. Never part of any report record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coordinates {
    lat: f64,
    lon: f64,
}

impl Coordinates {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::LongitudeOutOfRange(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Country, optionally province, optionally city. The resolution is implied
/// by which components are present.
///
/// Components are case-folded, trimmed and whitespace-collapsed on
/// construction so that spelling variants share one pending pool.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GeoDesignation {
    country: String,
    province: Option<String>,
    city: Option<String>,
}

fn normalize(field: &'static str, raw: &str) -> Result<String, GeoError> {
    let folded = raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    if folded.is_empty() {
        return Err(GeoError::EmptyComponent { field });
    }
    if folded.chars().any(|c| c.is_numeric()) {
        return Err(GeoError::NumericComponent { field });
    }
    Ok(folded)
}

impl GeoDesignation {
    pub fn country(country: &str) -> Result<Self, GeoError> {
        Ok(Self {
            country: normalize("country", country)?,
            province: None,
            city: None,
        })
    }

    pub fn province(country: &str, province: &str) -> Result<Self, GeoError> {
        Ok(Self {
            country: normalize("country", country)?,
            province: Some(normalize("province", province)?),
            city: None,
        })
    }

    pub fn city(country: &str, province: &str, city: &str) -> Result<Self, GeoError> {
        Ok(Self {
            country: normalize("country", country)?,
            province: Some(normalize("province", province)?),
            city: Some(normalize("city", city)?),
        })
    }

    /// Builds a designation from optional parts, checking them against the
    /// declared resolution when one is given.
    pub fn from_parts(
        country: &str,
        province: Option<&str>,
        city: Option<&str>,
        resolution: Option<Resolution>,
    ) -> Result<Self, GeoError> {
        let d = match (province, city) {
            (None, None) => Self::country(country)?,
            (Some(p), None) => Self::province(country, p)?,
            (Some(p), Some(c)) => Self::city(country, p, c)?,
            (None, Some(_)) => return Err(GeoError::CityWithoutProvince),
        };
        match resolution {
            Some(r) if r != d.resolution() => Err(GeoError::ResolutionMismatch { resolution: r }),
            _ => Ok(d),
        }
    }

    pub fn resolution(&self) -> Resolution {
        match (&self.province, &self.city) {
            (_, Some(_)) => Resolution::City,
            (Some(_), None) => Resolution::Province,
            (None, None) => Resolution::Country,
        }
    }

    pub fn country_name(&self) -> &str {
        &self.country
    }

    pub fn province_name(&self) -> Option<&str> {
        self.province.as_deref()
    }

    pub fn city_name(&self) -> Option<&str> {
        self.city.as_deref()
    }

    /// Drops every component finer than `target`.
    pub fn coarsen(&self, target: Resolution) -> Result<GeoDesignation, GeoError> {
        let from = self.resolution();
        if target > from {
            return Err(GeoError::FinerThanSource { from, to: target });
        }
        Ok(GeoDesignation {
            country: self.country.clone(),
            province: if target >= Resolution::Province { self.province.clone() } else { None },
            city: if target >= Resolution::City { self.city.clone() } else { None },
        })
    }

    /// The designation one level up, or `None` at country level.
    pub fn parent(&self) -> Option<GeoDesignation> {
        self.resolution().parent().map(|r| self.coarsen(r).expect("parent is coarser"))
    }

    /// Whether `other` lies inside (or equals) this designation.
    pub fn contains(&self, other: &GeoDesignation) -> bool {
        self.country == other.country
            && self.province.as_ref().is_none_or(|p| other.province.as_ref() == Some(p))
            && self.city.as_ref().is_none_or(|c| other.city.as_ref() == Some(c))
    }
}

impl fmt::Display for GeoDesignation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.country)?;
        for part in [&self.province, &self.city].into_iter().flatten() {
            write!(f, "/{part}")?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignationRecord {
    country: String,
    #[serde(default)]
    province: Option<String>,
    #[serde(default)]
    city: Option<String>,
    resolution: Resolution,
}

impl Serialize for GeoDesignation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        DesignationRecord {
            country: self.country.clone(),
            province: self.province.clone(),
            city: self.city.clone(),
            resolution: self.resolution(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GeoDesignation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let r = DesignationRecord::deserialize(deserializer)?;
        GeoDesignation::from_parts(&r.country, r.province.as_deref(), r.city.as_deref(), Some(r.resolution))
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum GeocodeError {
    /// The geocoding service could not be reached; the caller may retry.
    #[error("geocoder unavailable: {0}")]
    Unavailable(String),
    /// The coordinates fall outside the service's coverage. Submission is
    /// blocked rather than guessing a designation.
    #[error("unknown location")]
    UnknownLocation,
    #[error("geocoder returned an invalid designation: {0}")]
    InvalidResponse(String),
}

impl GeocodeError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GeocodeError::Unavailable(_))
    }
}

/// Maps a device location to a full city-level designation. Implementations
/// receive coordinates and nothing else.
pub trait Geocoder: Send + Sync {
    fn lookup(&self, coords: Coordinates) -> Result<GeoDesignation, GeocodeError>;
}

/// Resolves `coords` and insists on a fully populated (city-level) result.
pub fn reverse_geocode(coords: Coordinates, geocoder: &dyn Geocoder) -> Result<GeoDesignation, GeocodeError> {
    let d = geocoder.lookup(coords)?;
    if d.resolution() != Resolution::City {
        return Err(GeocodeError::InvalidResponse(format!("{d} is not city-level")));
    }
    Ok(d)
}

/// One row of the stub geocoder table. Bounds are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub country: String,
    pub province: String,
    pub city: String,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn contains(&self, c: Coordinates) -> bool {
        (self.lat_min..=self.lat_max).contains(&c.lat) && (self.lon_min..=self.lon_max).contains(&c.lon)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.lat_min + self.lat_max) / 2.0, (self.lon_min + self.lon_max) / 2.0)
    }
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("reading geocoder table: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing geocoder table: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
}

/// Offline geocoder backed by a bounding-box table; the first matching row
/// in document order wins.
#[derive(Clone, Debug)]
pub struct StubGeocoder {
    rows: Vec<(BoundingBox, GeoDesignation)>,
}

impl StubGeocoder {
    pub fn new(boxes: Vec<BoundingBox>) -> Result<Self, TableError> {
        let mut rows = Vec::with_capacity(boxes.len());
        for (i, b) in boxes.into_iter().enumerate() {
            let invalid = |reason: String| TableError::InvalidRow { row: i, reason };
            Coordinates::new(b.lat_min, b.lon_min).map_err(|e| invalid(e.to_string()))?;
            Coordinates::new(b.lat_max, b.lon_max).map_err(|e| invalid(e.to_string()))?;
            if b.lat_min > b.lat_max || b.lon_min > b.lon_max {
                return Err(invalid("min bound exceeds max bound".into()));
            }
            let d = GeoDesignation::city(&b.country, &b.province, &b.city).map_err(|e| invalid(e.to_string()))?;
            rows.push((b, d));
        }
        Ok(Self { rows })
    }

    pub fn from_json(json: &str) -> Result<Self, TableError> {
        Self::new(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TableError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The bundled fixture table.
    pub fn builtin() -> Self {
        Self::from_json(include_str!("../data/stub_geocoder.json")).expect("bundled table is valid")
    }

    pub fn boxes(&self) -> impl Iterator<Item = &BoundingBox> {
        self.rows.iter().map(|(b, _)| b)
    }
}

impl Geocoder for StubGeocoder {
    fn lookup(&self, coords: Coordinates) -> Result<GeoDesignation, GeocodeError> {
        self.rows
            .iter()
            .find(|(b, _)| b.contains(coords))
            .map(|(_, d)| d.clone())
            .ok_or(GeocodeError::UnknownLocation)
    }
}

#[derive(Deserialize)]
struct GeocodeResponse {
    country: String,
    province: String,
    city: String,
}

/// Client for a remote reverse-geocoding endpoint.
///
/// Issues `GET {base}/reverse?lat=..&lon=..` and expects
/// `{"country", "province", "city"}`; a 404 means the location is not
/// covered. Provider-specific responses need an adapter in front of this.
#[derive(Clone)]
pub struct HttpGeocoder {
    base: String,
    agent: ureq::Agent,
}

impl HttpGeocoder {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base_url.into().trim_end_matches('/').to_owned(),
            agent,
        }
    }
}

impl Geocoder for HttpGeocoder {
    fn lookup(&self, coords: Coordinates) -> Result<GeoDesignation, GeocodeError> {
        let mut resp = self
            .agent
            .get(format!("{}/reverse", self.base))
            .query("lat", coords.lat.to_string())
            .query("lon", coords.lon.to_string())
            .call()
            .map_err(|e| GeocodeError::Unavailable(e.to_string()))?;
        match resp.status().as_u16() {
            200 => {}
            404 => return Err(GeocodeError::UnknownLocation),
            s if s >= 500 => return Err(GeocodeError::Unavailable(format!("status {s}"))),
            s => return Err(GeocodeError::InvalidResponse(format!("status {s}"))),
        }
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GeocodeError::Unavailable(e.to_string()))?;
        let r: GeocodeResponse =
            serde_json::from_str(&body).map_err(|e| GeocodeError::InvalidResponse(e.to_string()))?;
        GeoDesignation::city(&r.country, &r.province, &r.city).map_err(|e| GeocodeError::InvalidResponse(e.to_string()))
    }
}

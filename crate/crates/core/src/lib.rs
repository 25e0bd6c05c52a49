//! Core of an anonymous, geo-tagged survey-report platform.
//!
//! - [`survey`] and [`report`]: the multiple-choice catalog and the report
//!   records built from it. There is no free text and no user identity.
//! - [`geo`]: coarse designations (country / province / city) and the
//!   reverse-geocoding channel that keeps raw coordinates out of reports.
//! - [`release`]: the pending pools that hold reports until `k` share a
//!   designation, then release them together under one truncated timestamp.
//! - [`analytics`]: aggregate statistics over released reports.
//! - [`fixture`]: deterministic synthetic report sets with prescribed marginals.
//! - [`simulate`]: a discrete-event model of time spent waiting for release.

pub mod analytics;
pub mod export;
pub mod fixture;
pub mod geo;
pub mod release;
pub mod report;
pub mod simulate;
pub mod survey;
pub mod time;

pub use geo::{Coordinates, GeoDesignation, Geocoder, Resolution};
pub use release::{PendingReport, ReleaseBatch, ReleaseEngine, ReleasePolicy};
pub use report::{PublicReport, ReportId, ReportSubmission};
pub use survey::{Catalog, QuestionId, SurveyId, TagId};
pub use time::{Granularity, Timestamp};

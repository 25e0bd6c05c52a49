//! Report records: what a client submits and what eventually becomes public.
//!
//! Neither record has a field that could hold user-authored text, raw
//! coordinates, a submission time or a user identifier. Submissions are
//! parsed strictly: any field outside the fixed wire shape is rejected.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geo::{GeoDesignation, GeoError, Resolution};
use crate::survey::{Catalog, QuestionId, SurveyId, TagId};
use crate::time::Timestamp;

/// Random 128-bit identifier, hex encoded. Carries no ordering information.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReportId(String);

impl ReportId {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let bytes: [u8; 16] = rng.random();
        Self(hex::encode(bytes))
    }

    /// Accepts the canonical 32-digit lowercase hex form.
    pub fn parse(s: &str) -> Option<Self> {
        (s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))).then(|| Self(s.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ReportId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An incoming anonymous report.
///
/// Wire shape (no other keys are accepted):
/// `{"schema_version": "...", "tags": ["..."], "designation": {"country", "province"?, "city"?, "resolution"}}`
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReportSubmission {
    #[serde(rename = "tags")]
    pub selections: BTreeSet<TagId>,
    pub designation: GeoDesignation,
    pub schema_version: String,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SubmissionViolation {
    #[error("unknown field {0}")]
    UnknownField(String),
    #[error("missing field {0}")]
    MissingField(String),
    #[error("field {path} must be {expected}")]
    WrongType { path: String, expected: &'static str },
    #[error("tag {0} selected more than once")]
    DuplicateTag(TagId),
    #[error("designation: {0}")]
    Designation(GeoError),
    #[error("at least one tag must be selected")]
    EmptySelections,
    #[error("unknown tag {0}")]
    UnknownTag(TagId),
    #[error("question {question} allows one tag but {selected} were selected")]
    SingleSelectExceeded { question: QuestionId, selected: usize },
    #[error("schema version {found:?} does not match catalog {expected:?}")]
    SchemaVersionMismatch { expected: String, found: String },
}

impl SubmissionViolation {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownField(_) => "unknown_field",
            Self::MissingField(_) => "missing_field",
            Self::WrongType { .. } => "wrong_type",
            Self::DuplicateTag(_) => "duplicate_tag",
            Self::Designation(_) => "invalid_designation",
            Self::EmptySelections => "empty_selections",
            Self::UnknownTag(_) => "unknown_tag",
            Self::SingleSelectExceeded { .. } => "single_select_exceeded",
            Self::SchemaVersionMismatch { .. } => "schema_version_mismatch",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SubmissionError {
    /// The payload is not JSON at all.
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("{} violation(s): {}", .0.len(), .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<SubmissionViolation>),
}

const TOP_LEVEL_KEYS: [&str; 3] = ["schema_version", "tags", "designation"];
const DESIGNATION_KEYS: [&str; 4] = ["country", "province", "city", "resolution"];

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str], prefix: &str, out: &mut Vec<SubmissionViolation>) {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            out.push(SubmissionViolation::UnknownField(format!("{prefix}{key}")));
        }
    }
}

fn string_field<'a>(
    obj: &'a Map<String, Value>,
    key: &str,
    prefix: &str,
    required: bool,
    out: &mut Vec<SubmissionViolation>,
) -> Option<&'a str> {
    match obj.get(key) {
        Some(Value::String(s)) => Some(s),
        Some(Value::Null) | None if !required => None,
        None => {
            out.push(SubmissionViolation::MissingField(format!("{prefix}{key}")));
            None
        }
        Some(_) => {
            out.push(SubmissionViolation::WrongType { path: format!("{prefix}{key}"), expected: "a string" });
            None
        }
    }
}

impl ReportSubmission {
    /// Parses the wire payload. A body that is not JSON is
    /// [`SubmissionError::Malformed`]; anything else that does not fit the
    /// wire shape is itemized as violations.
    pub fn from_json(body: &[u8]) -> Result<Self, SubmissionError> {
        let value: Value = serde_json::from_slice(body).map_err(|e| SubmissionError::Malformed(e.to_string()))?;
        let mut out = Vec::new();
        let Value::Object(obj) = value else {
            return Err(SubmissionError::Invalid(vec![SubmissionViolation::WrongType {
                path: "$".into(),
                expected: "an object",
            }]));
        };
        reject_unknown(&obj, &TOP_LEVEL_KEYS, "", &mut out);

        let schema_version = string_field(&obj, "schema_version", "", true, &mut out).map(str::to_owned);

        let mut selections = BTreeSet::new();
        match obj.get("tags") {
            None => out.push(SubmissionViolation::MissingField("tags".into())),
            Some(Value::Array(items)) => {
                for (i, item) in items.iter().enumerate() {
                    match item {
                        Value::String(s) => {
                            if !selections.insert(TagId::new(s.as_str())) {
                                out.push(SubmissionViolation::DuplicateTag(TagId::new(s.as_str())));
                            }
                        }
                        _ => out.push(SubmissionViolation::WrongType {
                            path: format!("tags[{i}]"),
                            expected: "a tag id string",
                        }),
                    }
                }
            }
            Some(_) => out.push(SubmissionViolation::WrongType { path: "tags".into(), expected: "an array" }),
        }

        let designation = match obj.get("designation") {
            None => {
                out.push(SubmissionViolation::MissingField("designation".into()));
                None
            }
            Some(Value::Object(d)) => {
                let p = "designation.";
                reject_unknown(d, &DESIGNATION_KEYS, p, &mut out);
                let country = string_field(d, "country", p, true, &mut out);
                let province = string_field(d, "province", p, false, &mut out);
                let city = string_field(d, "city", p, false, &mut out);
                let resolution = string_field(d, "resolution", p, true, &mut out).and_then(|r| {
                    r.parse::<Resolution>()
                        .map_err(|e| out.push(SubmissionViolation::Designation(e)))
                        .ok()
                });
                match (country, resolution) {
                    (Some(c), Some(r)) => GeoDesignation::from_parts(c, province, city, Some(r))
                        .map_err(|e| out.push(SubmissionViolation::Designation(e)))
                        .ok(),
                    _ => None,
                }
            }
            Some(_) => {
                out.push(SubmissionViolation::WrongType { path: "designation".into(), expected: "an object" });
                None
            }
        };

        match (schema_version, designation) {
            (Some(schema_version), Some(designation)) if out.is_empty() => {
                Ok(Self { selections, designation, schema_version })
            }
            _ => Err(SubmissionError::Invalid(out)),
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("submission serializes")
    }
}

/// Checks a structurally valid submission against the catalog.
pub fn validate_submission(sub: &ReportSubmission, catalog: &Catalog) -> Result<(), Vec<SubmissionViolation>> {
    let mut out = Vec::new();
    if sub.schema_version != catalog.version() {
        out.push(SubmissionViolation::SchemaVersionMismatch {
            expected: catalog.version().to_owned(),
            found: sub.schema_version.clone(),
        });
    }
    if sub.selections.is_empty() {
        out.push(SubmissionViolation::EmptySelections);
    }
    let mut per_question: std::collections::BTreeMap<&QuestionId, usize> = Default::default();
    for t in &sub.selections {
        match catalog.tag(t) {
            None => out.push(SubmissionViolation::UnknownTag(t.clone())),
            Some(r) if !r.question.multi_select => *per_question.entry(&r.question.id).or_default() += 1,
            Some(_) => {}
        }
    }
    for (q, n) in per_question {
        if n > 1 {
            out.push(SubmissionViolation::SingleSelectExceeded { question: q.clone(), selected: n });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Parses and validates in one step.
pub fn parse_submission(body: &[u8], catalog: &Catalog) -> Result<ReportSubmission, SubmissionError> {
    let sub = ReportSubmission::from_json(body)?;
    validate_submission(&sub, catalog).map_err(SubmissionError::Invalid)?;
    Ok(sub)
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown tag {0}")]
pub struct UnknownTag(pub TagId);

/// The distinct surveys whose tags appear in `selections`.
pub fn surveys_in_report<'a>(
    selections: impl IntoIterator<Item = &'a TagId>,
    catalog: &Catalog,
) -> Result<BTreeSet<SurveyId>, UnknownTag> {
    selections
        .into_iter()
        .map(|t| catalog.tag(t).map(|r| r.survey.id.clone()).ok_or_else(|| UnknownTag(t.clone())))
        .collect()
}

/// A released report. The only time it carries is the batch release time,
/// already truncated to the release granularity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "PublicRecord", try_from = "PublicRecord")]
pub struct PublicReport {
    pub report_id: ReportId,
    pub selections: BTreeSet<TagId>,
    pub designation: GeoDesignation,
    pub released_at: Timestamp,
}

/// Flat export shape of [`PublicReport`].
#[derive(Serialize, Deserialize)]
struct PublicRecord {
    report_id: ReportId,
    tags: BTreeSet<TagId>,
    country: String,
    province: Option<String>,
    city: Option<String>,
    resolution: Resolution,
    released_at: Timestamp,
}

impl From<PublicReport> for PublicRecord {
    fn from(r: PublicReport) -> Self {
        Self {
            report_id: r.report_id,
            tags: r.selections,
            country: r.designation.country_name().to_owned(),
            province: r.designation.province_name().map(str::to_owned),
            city: r.designation.city_name().map(str::to_owned),
            resolution: r.designation.resolution(),
            released_at: r.released_at,
        }
    }
}

impl TryFrom<PublicRecord> for PublicReport {
    type Error = GeoError;

    fn try_from(r: PublicRecord) -> Result<Self, Self::Error> {
        let designation =
            GeoDesignation::from_parts(&r.country, r.province.as_deref(), r.city.as_deref(), Some(r.resolution))?;
        Ok(Self { report_id: r.report_id, selections: r.tags, designation, released_at: r.released_at })
    }
}

impl PublicReport {
    /// Sort key for public listings and exports. Report ids are random, so
    /// order within one release instant carries no arrival information.
    pub fn listing_key(&self) -> (Timestamp, &ReportId) {
        (self.released_at, &self.report_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use serde_json::json;

    fn catalog() -> Catalog {
        Catalog::builtin()
    }

    fn body(tags: &[&str]) -> Vec<u8> {
        serde_json::to_vec(&json!({
            "schema_version": catalog().version(),
            "tags": tags,
            "designation": {"country": "USA", "province": "Indiana", "resolution": "province"},
        }))
        .unwrap()
    }

    fn sixteen_sexual_activity_tags() -> Vec<String> {
        let c = catalog();
        let sa = c.find_survey("Sexual Activity").unwrap();
        let mut tags: Vec<String> = Vec::new();
        for q in &sa.questions {
            let take = if q.multi_select { 3 } else { 1 };
            tags.extend(q.tags.iter().take(take).map(|t| t.id.to_string()));
        }
        tags.truncate(16);
        tags
    }

    #[test]
    fn sixteen_tags_from_one_survey_accepted() {
        let tags = sixteen_sexual_activity_tags();
        assert_eq!(tags.len(), 16);
        let refs: Vec<&str> = tags.iter().map(String::as_str).collect();
        let sub = parse_submission(&body(&refs), &catalog()).unwrap();
        assert_eq!(sub.selections.len(), 16);
        let surveys = surveys_in_report(&sub.selections, &catalog()).unwrap();
        assert_eq!(surveys.into_iter().collect::<Vec<_>>(), vec![SurveyId::from("sa")]);
    }

    #[test]
    fn empty_selection_rejected() {
        let err = parse_submission(&body(&[]), &catalog()).unwrap_err();
        assert_eq!(err, SubmissionError::Invalid(vec![SubmissionViolation::EmptySelections]));
    }

    #[test]
    fn free_text_field_rejected() {
        let mut v: Value = serde_json::from_slice(&body(&["fl.response.ignored"])).unwrap();
        v["comment"] = json!("John Doe did it");
        let err = ReportSubmission::from_json(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert_eq!(err, SubmissionError::Invalid(vec![SubmissionViolation::UnknownField("comment".into())]));
        assert_eq!(SubmissionViolation::UnknownField("comment".into()).code(), "unknown_field");
    }

    #[test]
    fn coordinates_in_designation_rejected() {
        let mut v: Value = serde_json::from_slice(&body(&["fl.response.ignored"])).unwrap();
        v["designation"]["lat"] = json!(39.16);
        let err = ReportSubmission::from_json(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert_eq!(
            err,
            SubmissionError::Invalid(vec![SubmissionViolation::UnknownField("designation.lat".into())])
        );
    }

    #[test]
    fn malformed_is_distinct_from_invalid() {
        assert!(matches!(ReportSubmission::from_json(b"{\"tags\": ["), Err(SubmissionError::Malformed(_))));
        assert!(matches!(ReportSubmission::from_json(b"[1, 2]"), Err(SubmissionError::Invalid(_))));
    }

    #[test]
    fn unknown_tag_and_single_select() {
        let err = parse_submission(&body(&["fl.response.ignored", "fl.response.rejected", "no.such.tag"]), &catalog())
            .unwrap_err();
        let SubmissionError::Invalid(v) = err else { panic!() };
        assert!(v.contains(&SubmissionViolation::UnknownTag("no.such.tag".into())));
        assert!(v.contains(&SubmissionViolation::SingleSelectExceeded {
            question: "fl.response".into(),
            selected: 2
        }));
    }

    #[test]
    fn schema_version_must_match() {
        let mut sub = ReportSubmission::from_json(&body(&["fl.response.ignored"])).unwrap();
        sub.schema_version = "stale".into();
        let v = validate_submission(&sub, &catalog()).unwrap_err();
        assert_eq!(v[0].code(), "schema_version_mismatch");
    }

    #[test]
    fn type_errors_itemized() {
        let raw = json!({"schema_version": 3, "tags": "x", "designation": {"country": "usa"}});
        let err = ReportSubmission::from_json(&serde_json::to_vec(&raw).unwrap()).unwrap_err();
        let SubmissionError::Invalid(v) = err else { panic!() };
        let codes: Vec<_> = v.iter().map(SubmissionViolation::code).collect();
        assert_eq!(codes, ["wrong_type", "wrong_type", "missing_field"]);
    }

    #[test]
    fn surveys_in_report_union_and_unknown() {
        let c = catalog();
        let tags: Vec<TagId> = vec!["sa.activity.kissing".into(), "fl.gender.male-flirting".into()];
        assert_eq!(surveys_in_report(&tags, &c).unwrap().len(), 2);
        let bad: Vec<TagId> = vec!["nope".into()];
        assert_eq!(surveys_in_report(&bad, &c), Err(UnknownTag("nope".into())));
    }

    #[test]
    fn public_record_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = PublicReport {
            report_id: ReportId::random(&mut rng),
            selections: ["fl.response.ignored".into()].into(),
            designation: GeoDesignation::city("USA", "Indiana", "Bloomington").unwrap(),
            released_at: "2014-02-14".parse().unwrap(),
        };
        let v: Value = serde_json::to_value(&r).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["city", "country", "province", "released_at", "report_id", "resolution", "tags"]);
        assert_eq!(v["released_at"], "2014-02-14");
        assert_eq!(r.report_id.as_str().len(), 32);
        let back: PublicReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}

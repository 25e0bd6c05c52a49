//! The survey catalog: surveys own questions, questions own tags.
//!
//! Every answer a report can carry is a catalog-defined [`Tag`]; there is no
//! free-text input anywhere in the model.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

opaque_id!(
    /// Identifies one survey in the catalog.
    SurveyId
);
opaque_id!(QuestionId);
opaque_id!(
    /// Identifies one answer option. Unique across the whole catalog.
    TagId
);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tag {
    pub id: TagId,
    pub label: String,
}

fn default_multi_select() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub id: QuestionId,
    pub text: String,
    /// Questions accept several tags unless the catalog says otherwise.
    #[serde(default = "default_multi_select")]
    pub multi_select: bool,
    pub tags: Vec<Tag>,
}

impl Question {
    /// How many tags a single report may select from this question.
    pub fn capacity(&self) -> usize {
        if self.multi_select {
            self.tags.len()
        } else {
            self.tags.len().min(1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveySchema {
    pub id: SurveyId,
    pub name: String,
    pub questions: Vec<Question>,
}

impl SurveySchema {
    pub fn tags(&self) -> impl Iterator<Item = &Tag> {
        self.questions.iter().flat_map(|q| q.tags.iter())
    }

    pub fn capacity(&self) -> usize {
        self.questions.iter().map(Question::capacity).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SchemaViolation {
    #[error("catalog has no surveys")]
    EmptyCatalog,
    #[error("{kind} id must not be empty (in {context})")]
    EmptyId { kind: &'static str, context: String },
    #[error("{kind} id {id:?} must not be numeric")]
    NumericId { kind: &'static str, id: String },
    #[error("duplicate survey id {0}")]
    DuplicateSurveyId(SurveyId),
    #[error("duplicate survey name {0:?}")]
    DuplicateSurveyName(String),
    #[error("survey {0} has an empty name")]
    EmptySurveyName(SurveyId),
    #[error("survey {0} needs at least one question")]
    NoQuestions(SurveyId),
    #[error("duplicate question id {0}")]
    DuplicateQuestionId(QuestionId),
    #[error("question {0} has empty text")]
    EmptyQuestionText(QuestionId),
    #[error("question {question} needs ≥2 tags (has {count})")]
    TooFewTags { question: QuestionId, count: usize },
    #[error("duplicate tag id {0}")]
    DuplicateTagId(TagId),
    #[error("tag {0} has an empty label")]
    EmptyLabel(TagId),
}

fn check_id(kind: &'static str, id: &str, context: &str, out: &mut Vec<SchemaViolation>) {
    if id.trim().is_empty() {
        out.push(SchemaViolation::EmptyId { kind, context: context.to_owned() });
    } else if id.trim().parse::<f64>().is_ok() {
        out.push(SchemaViolation::NumericId { kind, id: id.to_owned() });
    }
}

/// Checks every survey, question and tag invariant. Violations are returned
/// as data and name the offending element.
pub fn validate_schema(surveys: &[SurveySchema]) -> Result<(), Vec<SchemaViolation>> {
    let mut out = Vec::new();
    if surveys.is_empty() {
        out.push(SchemaViolation::EmptyCatalog);
    }
    let mut survey_ids = HashSet::new();
    let mut names = HashSet::new();
    let mut question_ids = HashSet::new();
    let mut tag_ids = HashSet::new();

    for s in surveys {
        check_id("survey", s.id.as_str(), &s.name, &mut out);
        if !survey_ids.insert(&s.id) {
            out.push(SchemaViolation::DuplicateSurveyId(s.id.clone()));
        }
        if s.name.trim().is_empty() {
            out.push(SchemaViolation::EmptySurveyName(s.id.clone()));
        } else if !names.insert(s.name.trim().to_lowercase()) {
            out.push(SchemaViolation::DuplicateSurveyName(s.name.clone()));
        }
        if s.questions.is_empty() {
            out.push(SchemaViolation::NoQuestions(s.id.clone()));
        }
        for q in &s.questions {
            check_id("question", q.id.as_str(), s.id.as_str(), &mut out);
            if !question_ids.insert(&q.id) {
                out.push(SchemaViolation::DuplicateQuestionId(q.id.clone()));
            }
            if q.text.trim().is_empty() {
                out.push(SchemaViolation::EmptyQuestionText(q.id.clone()));
            }
            if q.tags.len() < 2 {
                out.push(SchemaViolation::TooFewTags { question: q.id.clone(), count: q.tags.len() });
            }
            for t in &q.tags {
                check_id("tag", t.id.as_str(), q.id.as_str(), &mut out);
                if !tag_ids.insert(&t.id) {
                    out.push(SchemaViolation::DuplicateTagId(t.id.clone()));
                }
                if t.label.trim().is_empty() {
                    out.push(SchemaViolation::EmptyLabel(t.id.clone()));
                }
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("reading catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing catalog: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("catalog has {} violation(s): {}", .0.len(), join_violations(.0))]
    Invalid(Vec<SchemaViolation>),
}

fn join_violations(v: &[SchemaViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Where a tag sits in the hierarchy.
#[derive(Clone, Copy, Debug)]
pub struct TagRef<'a> {
    pub tag: &'a Tag,
    pub question: &'a Question,
    pub survey: &'a SurveySchema,
}

/// A validated, immutable catalog with lookup indexes.
///
/// The version string is derived from the catalog content, so a submission
/// built against one catalog cannot be interpreted under another.
#[derive(Clone, Debug)]
pub struct Catalog {
    version: String,
    surveys: Vec<SurveySchema>,
    tags: HashMap<TagId, (usize, usize, usize)>,
    questions: HashMap<QuestionId, (usize, usize)>,
}

impl Catalog {
    pub fn new(surveys: Vec<SurveySchema>) -> Result<Self, CatalogError> {
        validate_schema(&surveys).map_err(CatalogError::Invalid)?;
        let canonical = serde_json::to_vec(&surveys)?;
        let version = hex::encode(&Sha256::digest(&canonical)[..8]);
        let mut tags = HashMap::new();
        let mut questions = HashMap::new();
        for (si, s) in surveys.iter().enumerate() {
            for (qi, q) in s.questions.iter().enumerate() {
                questions.insert(q.id.clone(), (si, qi));
                for (ti, t) in q.tags.iter().enumerate() {
                    tags.insert(t.id.clone(), (si, qi, ti));
                }
            }
        }
        Ok(Self { version, surveys, tags, questions })
    }

    /// Parses the catalog file format: a top-level JSON array of surveys.
    pub fn from_json(json: &str) -> Result<Self, CatalogError> {
        Self::new(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The bundled eight-survey catalog.
    pub fn builtin() -> Self {
        Self::from_json(include_str!("../data/default_catalog.json")).expect("bundled catalog is valid")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn surveys(&self) -> &[SurveySchema] {
        &self.surveys
    }

    pub fn survey(&self, id: &SurveyId) -> Option<&SurveySchema> {
        self.surveys.iter().find(|s| &s.id == id)
    }

    /// Looks a survey up by id, or by case-insensitive display name.
    pub fn find_survey(&self, key: &str) -> Option<&SurveySchema> {
        let key = key.trim();
        self.surveys
            .iter()
            .find(|s| s.id.as_str() == key)
            .or_else(|| self.surveys.iter().find(|s| s.name.eq_ignore_ascii_case(key)))
    }

    pub fn question(&self, id: &QuestionId) -> Option<&Question> {
        self.questions.get(id).map(|&(s, q)| &self.surveys[s].questions[q])
    }

    pub fn survey_of_question(&self, id: &QuestionId) -> Option<&SurveySchema> {
        self.questions.get(id).map(|&(s, _)| &self.surveys[s])
    }

    pub fn tag(&self, id: &TagId) -> Option<TagRef<'_>> {
        self.tags.get(id).map(|&(s, q, t)| {
            let survey = &self.surveys[s];
            let question = &survey.questions[q];
            TagRef { tag: &question.tags[t], question, survey }
        })
    }

    pub fn contains_tag(&self, id: &TagId) -> bool {
        self.tags.contains_key(id)
    }

    pub fn tag_count(&self) -> usize {
        self.tags.len()
    }

    /// The catalog file representation.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.surveys).expect("catalog serializes")
    }
}

impl Serialize for Catalog {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Served<'a> {
            version: &'a str,
            surveys: &'a [SurveySchema],
        }
        Served { version: &self.version, surveys: &self.surveys }.serialize(serializer)
    }
}

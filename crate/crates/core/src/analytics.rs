//! Aggregate statistics over released reports.
//!
//! Everything here is a pure function of a slice of [`PublicReport`]s, so a
//! live store and its export give identical results. Pending reports never
//! reach this module.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoDesignation;
use crate::report::{surveys_in_report, PublicReport, UnknownTag};
use crate::survey::{Catalog, QuestionId, SurveyId, TagId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error("unknown survey {0}")]
    UnknownSurvey(String),
    #[error("co-occurrence needs two distinct questions, got {0} twice")]
    SameQuestion(QuestionId),
    #[error(transparent)]
    UnknownTag(#[from] UnknownTag),
}

/// Restricts which reports and tags [`tag_counts`] looks at.
#[derive(Clone, Debug, Default)]
pub struct TagFilter {
    within: Option<GeoDesignation>,
    tags: Option<BTreeSet<TagId>>,
}

impl TagFilter {
    pub fn all() -> Self {
        Self::default()
    }

    /// Only reports located in (or below) `d`.
    pub fn within(mut self, d: GeoDesignation) -> Self {
        self.within = Some(d);
        self
    }

    /// Only tags belonging to the survey named by `key` (id or name).
    pub fn survey(mut self, catalog: &Catalog, key: &str) -> Result<Self, AnalyticsError> {
        let s = catalog.find_survey(key).ok_or_else(|| AnalyticsError::UnknownSurvey(key.to_owned()))?;
        self.tags = Some(s.tags().map(|t| t.id.clone()).collect());
        Ok(self)
    }

    fn admits(&self, r: &PublicReport) -> bool {
        self.within.as_ref().is_none_or(|d| d.contains(&r.designation))
    }
}

/// Number of reports selecting each tag. Tags nobody selected are absent.
pub fn tag_counts(reports: &[PublicReport], filter: &TagFilter) -> BTreeMap<TagId, u64> {
    let mut counts = BTreeMap::new();
    for r in reports.iter().filter(|r| filter.admits(r)) {
        for t in &r.selections {
            if filter.tags.as_ref().is_none_or(|keep| keep.contains(t)) {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Tag-pair counts between two questions, e.g. activity given relationship.
///
/// Rows are the tags of `question_a`, columns the tags of `question_b`, both
/// in catalog order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceTable {
    pub question_a: QuestionId,
    pub question_b: QuestionId,
    pub row_tags: Vec<TagId>,
    pub col_tags: Vec<TagId>,
    /// `cells[i][j]`: reports selecting both `row_tags[i]` and `col_tags[j]`.
    pub cells: Vec<Vec<u64>>,
    /// Reports with at least one row tag among the reports counted in `base`.
    pub row_totals: Vec<u64>,
    /// Reports answering both questions.
    pub base: u64,
}

impl CooccurrenceTable {
    pub fn cell(&self, a: &TagId, b: &TagId) -> Option<u64> {
        let i = self.row_tags.iter().position(|t| t == a)?;
        let j = self.col_tags.iter().position(|t| t == b)?;
        Some(self.cells[i][j])
    }

    /// Each cell as a percentage of its row total. Rows need not sum to 100
    /// because a report can select several column tags.
    pub fn row_percentages(&self) -> Vec<Vec<f64>> {
        self.cells
            .iter()
            .zip(&self.row_totals)
            .map(|(row, &total)| {
                row.iter()
                    .map(|&c| if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 })
                    .collect()
            })
            .collect()
    }
}

pub fn cooccurrence(
    reports: &[PublicReport],
    catalog: &Catalog,
    question_a: &QuestionId,
    question_b: &QuestionId,
) -> Result<CooccurrenceTable, AnalyticsError> {
    if question_a == question_b {
        return Err(AnalyticsError::SameQuestion(question_a.clone()));
    }
    let qa = catalog.question(question_a).ok_or_else(|| AnalyticsError::UnknownQuestion(question_a.clone()))?;
    let qb = catalog.question(question_b).ok_or_else(|| AnalyticsError::UnknownQuestion(question_b.clone()))?;
    let row_index: HashMap<&TagId, usize> = qa.tags.iter().enumerate().map(|(i, t)| (&t.id, i)).collect();
    let col_index: HashMap<&TagId, usize> = qb.tags.iter().enumerate().map(|(i, t)| (&t.id, i)).collect();

    let mut cells = vec![vec![0u64; qb.tags.len()]; qa.tags.len()];
    let mut row_totals = vec![0u64; qa.tags.len()];
    let mut base = 0;
    for r in reports {
        let rows: Vec<usize> = r.selections.iter().filter_map(|t| row_index.get(t).copied()).collect();
        let cols: Vec<usize> = r.selections.iter().filter_map(|t| col_index.get(t).copied()).collect();
        if rows.is_empty() || cols.is_empty() {
            continue;
        }
        base += 1;
        for &i in &rows {
            row_totals[i] += 1;
            for &j in &cols {
                cells[i][j] += 1;
            }
        }
    }
    Ok(CooccurrenceTable {
        question_a: question_a.clone(),
        question_b: question_b.clone(),
        row_tags: qa.tags.iter().map(|t| t.id.clone()).collect(),
        col_tags: qb.tags.iter().map(|t| t.id.clone()).collect(),
        cells,
        row_totals,
        base,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub value: u64,
    /// Fraction of observations `<= value`.
    pub fraction: f64,
}

/// Empirical distribution of a count. `mean` is `None` for empty input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub observations: u64,
    pub mean: Option<f64>,
    pub cdf: Vec<CdfPoint>,
    /// Nearest-rank percentiles at 50, 90, 99.
    pub percentiles: BTreeMap<u8, u64>,
}

impl DistributionSummary {
    pub fn from_values(values: impl IntoIterator<Item = u64>) -> Self {
        let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
        let mut n = 0u64;
        let mut sum = 0u128;
        for v in values {
            *hist.entry(v).or_insert(0) += 1;
            n += 1;
            sum += u128::from(v);
        }
        if n == 0 {
            return Self { observations: 0, mean: None, cdf: Vec::new(), percentiles: BTreeMap::new() };
        }
        let mut cumulative = 0;
        let mut cdf = Vec::with_capacity(hist.len());
        for (&value, &count) in &hist {
            cumulative += count;
            let fraction = if cumulative == n { 1.0 } else { cumulative as f64 / n as f64 };
            cdf.push(CdfPoint { value, fraction });
        }
        let percentiles = [50u8, 90, 99]
            .into_iter()
            .map(|p| {
                let rank = (u64::from(p) * n).div_ceil(100).max(1);
                let mut seen = 0;
                let value = hist
                    .iter()
                    .find(|(_, &c)| {
                        seen += c;
                        seen >= rank
                    })
                    .map(|(&v, _)| v)
                    .expect("rank within range");
                (p, value)
            })
            .collect();
        Self { observations: n, mean: Some(sum as f64 / n as f64), cdf, percentiles }
    }

    /// Fraction of observations strictly greater than `threshold`.
    pub fn fraction_above(&self, threshold: u64) -> f64 {
        let at_or_below = self
            .cdf
            .iter()
            .take_while(|p| p.value <= threshold)
            .last()
            .map_or(0.0, |p| p.fraction);
        if self.observations == 0 {
            0.0
        } else {
            1.0 - at_or_below
        }
    }
}

/// Distribution of the number of tags per report.
pub fn tags_per_report(reports: &[PublicReport]) -> DistributionSummary {
    DistributionSummary::from_values(reports.iter().map(|r| r.selections.len() as u64))
}

/// Histogram of how many distinct surveys each report answers.
pub fn surveys_per_report(reports: &[PublicReport], catalog: &Catalog) -> Result<BTreeMap<usize, u64>, AnalyticsError> {
    let mut hist = BTreeMap::new();
    for r in reports {
        let n = surveys_in_report(&r.selections, catalog)?.len();
        *hist.entry(n).or_insert(0) += 1;
    }
    Ok(hist)
}

/// Number of reports containing each survey.
pub fn survey_counts(reports: &[PublicReport], catalog: &Catalog) -> Result<BTreeMap<SurveyId, u64>, AnalyticsError> {
    let mut counts = BTreeMap::new();
    for r in reports {
        for s in surveys_in_report(&r.selections, catalog)? {
            *counts.entry(s).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

/// Null model for surveys per report: each extra survey halves the count.
///
/// Returns `counts[n - 1]` for `n` in `1..=n_max`. Expected values are
/// `total * 2^-n / sum_{m=1..n_max} 2^-m`, rounded by largest-remainder
/// apportionment so the integers sum to exactly `total`. Remainder ties go
/// to the smaller `n`.
pub fn geometric_null(n_max: usize, total: u64) -> Vec<u64> {
    if n_max == 0 {
        return Vec::new();
    }
    // weights 2^(n_max - n) keep everything in integers: sum = 2^n_max - 1
    let weights: Vec<u128> = (1..=n_max).map(|n| 1u128 << (n_max - n)).collect();
    let denom: u128 = weights.iter().sum();
    let mut counts: Vec<u64> = Vec::with_capacity(n_max);
    let mut remainders: Vec<(u128, usize)> = Vec::with_capacity(n_max);
    for (i, &w) in weights.iter().enumerate() {
        let exact = u128::from(total) * w;
        counts.push((exact / denom) as u64);
        remainders.push((exact % denom, i));
    }
    let short = total - counts.iter().sum::<u64>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(short as usize) {
        counts[i] += 1;
    }
    counts
}

/// Grouping level for [`geography_counts`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GeoLevel {
    Country,
    /// Provinces inside the named country.
    ProvinceWithin(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedCount {
    pub name: String,
    pub count: u64,
}

/// Report counts per country, or per province within one country, sorted by
/// count descending then name. Reports without the requested component are
/// skipped.
pub fn geography_counts(reports: &[PublicReport], level: &GeoLevel) -> Vec<RankedCount> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    match level {
        GeoLevel::Country => {
            for r in reports {
                *counts.entry(r.designation.country_name()).or_insert(0) += 1;
            }
        }
        GeoLevel::ProvinceWithin(country) => {
            let country = country.trim().to_lowercase();
            for r in reports.iter().filter(|r| r.designation.country_name() == country) {
                if let Some(p) = r.designation.province_name() {
                    *counts.entry(p).or_insert(0) += 1;
                }
            }
        }
    }
    let mut ranked: Vec<RankedCount> =
        counts.into_iter().map(|(name, count)| RankedCount { name: name.to_owned(), count }).collect();
    ranked.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.name.cmp(&b.name)));
    ranked
}

/// CSV renderings of the analytics outputs.
pub mod csv_out {
    use super::*;

    fn finish(w: csv::Writer<Vec<u8>>) -> String {
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }

    pub fn tag_counts(counts: &BTreeMap<TagId, u64>) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["tag", "count"]).expect("in-memory write");
        for (t, c) in counts {
            w.write_record([t.as_str(), &c.to_string()]).expect("in-memory write");
        }
        finish(w)
    }

    pub fn cooccurrence(table: &CooccurrenceTable) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["tag_a", "tag_b", "count", "row_total", "row_percent", "base"])
            .expect("in-memory write");
        let pct = table.row_percentages();
        for (i, a) in table.row_tags.iter().enumerate() {
            for (j, b) in table.col_tags.iter().enumerate() {
                w.write_record([
                    a.as_str(),
                    b.as_str(),
                    &table.cells[i][j].to_string(),
                    &table.row_totals[i].to_string(),
                    &format!("{:.2}", pct[i][j]),
                    &table.base.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        finish(w)
    }

    pub fn distribution(d: &DistributionSummary) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["value", "cumulative_fraction"]).expect("in-memory write");
        for p in &d.cdf {
            w.write_record([p.value.to_string(), format!("{:.6}", p.fraction)]).expect("in-memory write");
        }
        finish(w)
    }

    pub fn histogram(h: &BTreeMap<usize, u64>) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["n", "count"]).expect("in-memory write");
        for (n, c) in h {
            w.write_record([n.to_string(), c.to_string()]).expect("in-memory write");
        }
        finish(w)
    }

    pub fn ranked(rows: &[RankedCount]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "count"]).expect("in-memory write");
        for r in rows {
            w.write_record([r.name.clone(), r.count.to_string()]).expect("in-memory write");
        }
        finish(w)
    }
}

//! Named aggregates over released reports, as served at
//! `/api/v1/aggregates/{name}` and printed by the CLI.

use std::collections::{BTreeMap, HashMap};

use anonreport_core::analytics::{
    self, csv_out, cooccurrence, geography_counts, geometric_null, surveys_per_report, tag_counts, tags_per_report,
    GeoLevel, TagFilter,
};
use anonreport_core::{Catalog, GeoDesignation, PublicReport};
use serde_json::{json, Value};
use thiserror::Error;

pub const NAMES: [&str; 7] = [
    "tag-counts",
    "cooccurrence",
    "tags-per-report",
    "surveys-per-report",
    "survey-counts",
    "geometric-null",
    "geography",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("unknown aggregate {0:?}")]
    Unknown(String),
    #[error("bad parameter {name}: {reason}")]
    BadParam { name: &'static str, reason: String },
    #[error(transparent)]
    Analytics(#[from] analytics::AnalyticsError),
}

/// One aggregate rendered both ways.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub json: Value,
    pub csv: String,
}

fn param<'a>(params: &'a HashMap<String, String>, name: &str) -> Option<&'a str> {
    params.get(name).map(String::as_str).filter(|s| !s.trim().is_empty())
}

fn required<'a>(params: &'a HashMap<String, String>, name: &'static str) -> Result<&'a str, AggregateError> {
    param(params, name).ok_or(AggregateError::BadParam { name, reason: "required".into() })
}

fn number<T: std::str::FromStr>(params: &HashMap<String, String>, name: &'static str) -> Result<Option<T>, AggregateError> {
    param(params, name)
        .map(|s| s.parse::<T>().map_err(|_| AggregateError::BadParam { name, reason: format!("not a number: {s:?}") }))
        .transpose()
}

fn area(params: &HashMap<String, String>) -> Result<Option<GeoDesignation>, AggregateError> {
    let Some(country) = param(params, "country") else {
        if param(params, "province").is_some() || param(params, "city").is_some() {
            return Err(AggregateError::BadParam { name: "country", reason: "required with province/city".into() });
        }
        return Ok(None);
    };
    GeoDesignation::from_parts(country, param(params, "province"), param(params, "city"), None)
        .map(Some)
        .map_err(|e| AggregateError::BadParam { name: "country", reason: e.to_string() })
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("aggregates serialize")
}

pub fn compute(
    name: &str,
    params: &HashMap<String, String>,
    reports: &[PublicReport],
    catalog: &Catalog,
) -> Result<Aggregate, AggregateError> {
    match name {
        "tag-counts" => {
            let mut filter = TagFilter::all();
            if let Some(d) = area(params)? {
                filter = filter.within(d);
            }
            if let Some(s) = param(params, "survey") {
                filter = filter.survey(catalog, s)?;
            }
            let counts = tag_counts(reports, &filter);
            Ok(Aggregate { csv: csv_out::tag_counts(&counts), json: json!({ "counts": counts }) })
        }
        "cooccurrence" => {
            let a = required(params, "a")?;
            let b = required(params, "b")?;
            let table = cooccurrence(reports, catalog, &a.into(), &b.into())?;
            let mut v = to_json(&table);
            v["row_percentages"] = to_json(&table.row_percentages());
            Ok(Aggregate { csv: csv_out::cooccurrence(&table), json: v })
        }
        "tags-per-report" => {
            let d = tags_per_report(reports);
            let mut v = to_json(&d);
            let above: u64 = number(params, "above")?.unwrap_or(80);
            v["fraction_above"] = json!({ "threshold": above, "fraction": d.fraction_above(above) });
            Ok(Aggregate { csv: csv_out::distribution(&d), json: v })
        }
        "surveys-per-report" => {
            let hist = surveys_per_report(reports, catalog)?;
            let n_max = hist.keys().copied().max().unwrap_or(1).max(1);
            let null = geometric_null(n_max, reports.len() as u64);
            let null_hist: BTreeMap<usize, u64> = null.iter().enumerate().map(|(i, &c)| (i + 1, c)).collect();
            Ok(Aggregate {
                csv: csv_out::histogram(&hist),
                json: json!({ "histogram": hist, "geometric_null": null_hist }),
            })
        }
        "survey-counts" => {
            let counts = analytics::survey_counts(reports, catalog)?;
            let rows: Vec<analytics::RankedCount> = counts
                .iter()
                .map(|(id, &count)| analytics::RankedCount { name: id.to_string(), count })
                .collect();
            Ok(Aggregate { csv: csv_out::ranked(&rows), json: json!({ "counts": counts }) })
        }
        "geometric-null" => {
            let n_max: usize = number(params, "n_max")?.unwrap_or(catalog.surveys().len());
            let total: u64 = number(params, "total")?.unwrap_or(reports.len() as u64);
            if n_max == 0 || n_max > 64 {
                return Err(AggregateError::BadParam { name: "n_max", reason: "must be in 1..=64".into() });
            }
            let counts = geometric_null(n_max, total);
            let hist: BTreeMap<usize, u64> = counts.iter().enumerate().map(|(i, &c)| (i + 1, c)).collect();
            Ok(Aggregate {
                csv: csv_out::histogram(&hist),
                json: json!({ "n_max": n_max, "total": total, "counts": counts }),
            })
        }
        "geography" => {
            let level = match param(params, "level").unwrap_or("country") {
                "country" => GeoLevel::Country,
                "province" | "state" => GeoLevel::ProvinceWithin(required(params, "country")?.to_owned()),
                other => {
                    return Err(AggregateError::BadParam { name: "level", reason: format!("unknown level {other:?}") })
                }
            };
            let rows = geography_counts(reports, &level);
            Ok(Aggregate { csv: csv_out::ranked(&rows), json: json!({ "rows": rows }) })
        }
        other => Err(AggregateError::Unknown(other.to_owned())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn every_name_works_on_empty_input() {
        let c = Catalog::builtin();
        for name in NAMES {
            let params = match name {
                "cooccurrence" => p(&[("a", "sa.relationship"), ("b", "sa.activity")]),
                _ => p(&[]),
            };
            compute(name, &params, &[], &c).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn errors() {
        let c = Catalog::builtin();
        assert_eq!(compute("nope", &p(&[]), &[], &c), Err(AggregateError::Unknown("nope".into())));
        assert!(matches!(compute("cooccurrence", &p(&[("a", "x")]), &[], &c), Err(AggregateError::BadParam { name: "b", .. })));
        assert!(matches!(compute("tag-counts", &p(&[("city", "x")]), &[], &c), Err(AggregateError::BadParam { .. })));
        assert!(matches!(compute("geometric-null", &p(&[("n_max", "x")]), &[], &c), Err(AggregateError::BadParam { .. })));
        assert!(matches!(compute("tag-counts", &p(&[("survey", "Astrology")]), &[], &c), Err(AggregateError::Analytics(_))));
    }

    #[test]
    fn geometric_null_defaults_and_params() {
        let c = Catalog::builtin();
        let a = compute("geometric-null", &p(&[("n_max", "5"), ("total", "1000")]), &[], &c).unwrap();
        assert_eq!(a.json["counts"], json!([516, 258, 129, 65, 32]));
    }
}

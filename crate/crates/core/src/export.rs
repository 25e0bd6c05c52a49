//! Open-data export of released reports: JSON Lines (one report per line)
//! and CSV. Both are written in listing order, `(released_at, report_id)`,
//! so exporting an unchanged store twice gives identical bytes.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::geo::{GeoDesignation, Resolution};
use crate::report::{PublicReport, ReportId};
use crate::time::Timestamp;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
}

pub const CSV_HEADER: [&str; 7] = ["report_id", "tags", "country", "province", "city", "resolution", "released_at"];

pub fn sort_for_listing(reports: &mut [PublicReport]) {
    reports.sort_by(|a, b| a.listing_key().cmp(&b.listing_key()));
}

pub fn write_jsonl<'a, W: Write>(
    mut out: W,
    reports: impl IntoIterator<Item = &'a PublicReport>,
) -> Result<(), ExportError> {
    for r in reports {
        serde_json::to_writer(&mut out, r).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<PublicReport>, ExportError> {
    let mut reports = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        reports.push(serde_json::from_str(&line).map_err(|source| ExportError::Json { line: i + 1, source })?);
    }
    Ok(reports)
}

/// CSV with a fixed header; `tags` are `;`-separated, absent components empty.
pub fn write_csv<'a, W: Write>(out: W, reports: impl IntoIterator<Item = &'a PublicReport>) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        let tags = r.selections.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(";");
        w.write_record([
            r.report_id.as_str(),
            &tags,
            r.designation.country_name(),
            r.designation.province_name().unwrap_or(""),
            r.designation.city_name().unwrap_or(""),
            r.designation.resolution().as_str(),
            &r.released_at.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<PublicReport>, ExportError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(ExportError::InvalidRow { row: 0, reason: "unexpected header".into() });
    }
    let mut reports = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |reason: String| ExportError::InvalidRow { row: i + 1, reason };
        let opt = |s: &str| if s.is_empty() { None } else { Some(s.to_owned()) };
        let resolution: Resolution = rec[5].parse().map_err(|e: crate::geo::GeoError| bad(e.to_string()))?;
        let province = opt(&rec[3]);
        let city = opt(&rec[4]);
        let designation = GeoDesignation::from_parts(&rec[2], province.as_deref(), city.as_deref(), Some(resolution))
            .map_err(|e| bad(e.to_string()))?;
        let released_at: Timestamp = rec[6].parse().map_err(|e: crate::time::TimestampParseError| bad(e.to_string()))?;
        let report_id = ReportId::parse(&rec[0]).ok_or_else(|| bad(format!("invalid report id {:?}", &rec[0])))?;
        reports.push(PublicReport {
            report_id,
            selections: rec[1].split(';').filter(|t| !t.is_empty()).map(Into::into).collect(),
            designation,
            released_at,
        });
    }
    Ok(reports)
}

//! CSV ingestion and persistence for issue datasets.
//!
//! Schema (UTF-8, comma-separated, quoted fields), columns in this order:
//! `issue_key, project_key, repository, created, resolved, issue_type,
//! components, title, description, story_point, sp_assignment_count,
//! fields_changed_after_sp, is_resolved`.
//!
//! Timestamps are ISO-8601 (`2016-03-01T10:00:00Z`); a space-separated
//! variant and bare dates are accepted and read as UTC. `components` is
//! semicolon-joined. `fields_changed_after_sp` is `true`/`false`/`unknown`;
//! `sp_assignment_count` may be `unknown` or empty when the source could
//! not provide it.

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use std::path::Path;

use super::types::{Issue, IssueDataset};
use super::CorpusError;

pub const CSV_HEADER: [&str; 13] = [
    "issue_key",
    "project_key",
    "repository",
    "created",
    "resolved",
    "issue_type",
    "components",
    "title",
    "description",
    "story_point",
    "sp_assignment_count",
    "fields_changed_after_sp",
    "is_resolved",
];

/// A rejected CSV row: 1-based line number and what was wrong with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

/// Result of an ingestion pass: the well-formed rows as a dataset plus the
/// rejected rows.
#[derive(Debug)]
pub struct IngestOutcome {
    pub dataset: IssueDataset,
    pub row_errors: Vec<RowError>,
}

/// Reads a dataset from CSV, collecting malformed rows instead of failing
/// on them. A header that does not match the schema is a hard error.
pub fn ingest_csv(path: &Path) -> Result<IngestOutcome, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Io(e.to_string()))?
        .clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != CSV_HEADER {
        return Err(CorpusError::Schema {
            expected: CSV_HEADER.join(","),
            found: found.join(","),
        });
    }

    let mut issues = Vec::new();
    let mut row_errors = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                row_errors.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        match parse_row(&record) {
            Ok(issue) => issues.push(issue),
            Err(message) => row_errors.push(RowError { line, message }),
        }
    }

    let projects: std::collections::BTreeSet<&str> =
        issues.iter().map(|i| i.project_key.as_str()).collect();
    let dataset = if projects.len() > 1 {
        let label = format!("pool({})", projects.into_iter().collect::<Vec<_>>().join("+"));
        IssueDataset::new_pooled(&label, issues)?
    } else {
        IssueDataset::new(issues)?
    };
    Ok(IngestOutcome { dataset, row_errors })
}

fn parse_row(record: &csv::StringRecord) -> Result<Issue, String> {
    let field = |i: usize| record.get(i).unwrap_or("").trim();
    let issue = Issue {
        issue_key: field(0).to_string(),
        project_key: field(1).to_string(),
        repository: field(2).to_string(),
        created: parse_timestamp(field(3)).map_err(|e| format!("created: {e}"))?,
        resolved: match field(4) {
            "" => None,
            s => Some(parse_timestamp(s).map_err(|e| format!("resolved: {e}"))?),
        },
        issue_type: field(5).to_string(),
        components: split_components(field(6)),
        title: field(7).to_string(),
        description: record.get(8).unwrap_or("").to_string(),
        story_point: field(9)
            .parse::<f64>()
            .map_err(|_| format!("story_point: not a number: {:?}", field(9)))?,
        sp_assignment_count: match field(10) {
            "" | "unknown" => None,
            s => Some(
                s.parse::<u32>()
                    .map_err(|_| format!("sp_assignment_count: not an integer: {s:?}"))?,
            ),
        },
        fields_changed_after_sp: match field(11) {
            "unknown" => None,
            s => Some(parse_bool(s).map_err(|e| format!("fields_changed_after_sp: {e}"))?),
        },
        is_resolved: parse_bool(field(12)).map_err(|e| format!("is_resolved: {e}"))?,
    };
    issue.validate()?;
    Ok(issue)
}

fn split_components(raw: &str) -> Vec<String> {
    raw.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "True" | "TRUE" | "1" => Ok(true),
        "false" | "False" | "FALSE" | "0" => Ok(false),
        other => Err(format!("not a boolean: {other:?}")),
    }
}

fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.with_timezone(&Utc));
    }
    if let Ok(naive) = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Ok(naive.and_utc());
    }
    if let Ok(date) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(date.and_hms_opt(0, 0, 0).unwrap().and_utc());
    }
    Err(format!("unparseable timestamp: {s:?}"))
}

/// Writes a dataset in the ingestion schema. Unknown provenance fields are
/// written as `unknown`.
pub fn write_csv(ds: &IssueDataset, path: &Path) -> Result<(), CorpusError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
    writer
        .write_record(CSV_HEADER)
        .map_err(|e| CorpusError::Io(e.to_string()))?;
    for issue in ds.issues() {
        writer
            .write_record([
                issue.issue_key.as_str(),
                issue.project_key.as_str(),
                issue.repository.as_str(),
                &issue.created.to_rfc3339(),
                &issue.resolved.map(|r| r.to_rfc3339()).unwrap_or_default(),
                issue.issue_type.as_str(),
                &issue.components.join(";"),
                issue.title.as_str(),
                issue.description.as_str(),
                &format_sp(issue.story_point),
                &issue
                    .sp_assignment_count
                    .map(|c| c.to_string())
                    .unwrap_or_else(|| "unknown".into()),
                &issue
                    .fields_changed_after_sp
                    .map(|b| b.to_string())
                    .unwrap_or_else(|| "unknown".into()),
                &issue.is_resolved.to_string(),
            ])
            .map_err(|e| CorpusError::Io(e.to_string()))?;
    }
    writer.flush().map_err(|e| CorpusError::Io(e.to_string()))?;
    Ok(())
}

/// Shortest decimal form for a story point (`3`, `0.5`, `1.25`).
fn format_sp(sp: f64) -> String {
    if sp == sp.trunc() && sp.abs() < 1e15 {
        format!("{}", sp as i64)
    } else {
        format!("{sp}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "issue_key,project_key,repository,created,resolved,issue_type,components,title,description,story_point,sp_assignment_count,fields_changed_after_sp,is_resolved\n";

    #[test]
    fn ingests_rows_in_creation_order() {
        let csv = format!(
            "{HEADER}\
             P-2,PROJ,repo,2016-02-01T00:00:00Z,,Bug,ui,second,,3,1,false,true\n\
             P-1,PROJ,repo,2016-01-01T00:00:00Z,2016-01-05T00:00:00Z,Story,api;ui,first,long text,5,1,false,true\n\
             P-3,PROJ,repo,2016-03-01T00:00:00Z,,Task,,third,,1,1,false,true\n"
        );
        let f = write_temp(&csv);
        let out = ingest_csv(f.path()).unwrap();
        assert!(out.row_errors.is_empty());
        let keys: Vec<_> = out.dataset.issues().iter().map(|i| i.issue_key.as_str()).collect();
        assert_eq!(keys, ["P-1", "P-2", "P-3"]);
        assert_eq!(out.dataset.issues()[0].components, vec!["api", "ui"]);
        assert_eq!(out.dataset.project_key(), "PROJ");
        assert!(!out.dataset.is_pooled());
    }

    #[test]
    fn malformed_story_point_becomes_row_error() {
        let csv = format!(
            "{HEADER}\
             P-1,PROJ,repo,2016-01-01T00:00:00Z,,Bug,,a,,5,1,false,true\n\
             P-2,PROJ,repo,2016-01-02T00:00:00Z,,Bug,,b,,abc,1,false,true\n\
             P-3,PROJ,repo,2016-01-03T00:00:00Z,,Bug,,c,,2,1,false,true\n"
        );
        let f = write_temp(&csv);
        let out = ingest_csv(f.path()).unwrap();
        assert_eq!(out.dataset.len(), 2);
        assert_eq!(out.row_errors.len(), 1);
        assert_eq!(out.row_errors[0].line, 3);
        assert!(out.row_errors[0].message.contains("story_point"));
    }

    #[test]
    fn identical_timestamps_order_by_key() {
        let csv = format!(
            "{HEADER}\
             P-9,PROJ,repo,2016-01-01T00:00:00Z,,Bug,,a,,1,1,false,true\n\
             P-10,PROJ,repo,2016-01-01T00:00:00Z,,Bug,,b,,1,1,false,true\n"
        );
        let f = write_temp(&csv);
        let out = ingest_csv(f.path()).unwrap();
        let keys: Vec<_> = out.dataset.issues().iter().map(|i| i.issue_key.as_str()).collect();
        // lexicographic: "P-10" < "P-9"
        assert_eq!(keys, ["P-10", "P-9"]);
    }

    #[test]
    fn wrong_header_is_a_schema_error() {
        let f = write_temp("key,project\nX-1,PROJ\n");
        assert!(matches!(
            ingest_csv(f.path()),
            Err(CorpusError::Schema { .. })
        ));
    }

    #[test]
    fn created_after_resolved_is_rejected_per_row() {
        let csv = format!(
            "{HEADER}\
             P-1,PROJ,repo,2016-05-01T00:00:00Z,2016-01-01T00:00:00Z,Bug,,a,,1,1,false,true\n"
        );
        let f = write_temp(&csv);
        let out = ingest_csv(f.path()).unwrap();
        assert!(out.dataset.is_empty());
        assert_eq!(out.row_errors.len(), 1);
    }

    #[test]
    fn unknown_provenance_and_multi_project_pooling() {
        let csv = format!(
            "{HEADER}\
             A-1,ALPHA,repo,2016-01-01T00:00:00Z,,Bug,,a,,1,unknown,unknown,true\n\
             B-1,BETA,repo,2016-01-02T00:00:00Z,,Bug,,b,,2,1,false,true\n"
        );
        let f = write_temp(&csv);
        let out = ingest_csv(f.path()).unwrap();
        assert!(out.dataset.is_pooled());
        assert!(!out.dataset.issues()[0].has_provenance());
        assert!(out.dataset.issues()[1].has_provenance());
    }

    #[test]
    fn csv_round_trip_preserves_dataset() {
        let csv = format!(
            "{HEADER}\
             P-1,PROJ,repo,2016-01-01T00:00:00Z,2016-01-09T12:30:00Z,Story,api;db,\"fix \"\"quotes\"\"\",\"multi\nline\",0.5,2,true,true\n\
             P-2,PROJ,repo,2016-02-01T00:00:00Z,,Bug,,other,,13,unknown,unknown,false\n"
        );
        let f = write_temp(&csv);
        let original = ingest_csv(f.path()).unwrap().dataset;
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&original, out.path()).unwrap();
        let reread = ingest_csv(out.path()).unwrap();
        assert!(reread.row_errors.is_empty());
        assert_eq!(reread.dataset, original);
    }

    #[test]
    fn alternate_timestamp_forms_parse_as_utc() {
        assert_eq!(
            parse_timestamp("2016-03-01 10:00:00").unwrap(),
            parse_timestamp("2016-03-01T10:00:00Z").unwrap()
        );
        assert_eq!(
            parse_timestamp("2016-03-01").unwrap(),
            parse_timestamp("2016-03-01T00:00:00Z").unwrap()
        );
        assert!(parse_timestamp("yesterday").is_err());
    }
}

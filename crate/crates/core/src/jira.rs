//! Minimal Jira REST client: paginated issue search mapped into an
//! [`IssueDataset`].
//!
//! Fetched issues carry no story-point provenance (assignment counts and
//! post-assignment edit flags are changelog-derived, which this client does
//! not mine), so their provenance fields are `None` and the resulting
//! dataset is rejected by the provenance filter until the flags are
//! supplied out of band. Issues without a story-point value are skipped.

use chrono::{DateTime, Utc};
use serde::Deserialize;
use std::time::Duration;
use thiserror::Error;

use crate::corpus::{CorpusError, Issue, IssueDataset};

#[derive(Debug, Error)]
pub enum JiraError {
    #[error("transport failure after {retries} retries: {message}")]
    Transport { retries: u32, message: String },
    #[error("authentication rejected (HTTP {status})")]
    Credentials { status: u16 },
    #[error("unexpected HTTP status {status}: {message}")]
    Http { status: u16, message: String },
    #[error("malformed response: {0}")]
    Parse(String),
    #[error("page size must be >= 1")]
    BadPageSize,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Connection and mapping settings for one fetch.
#[derive(Debug, Clone)]
pub struct JiraConfig {
    /// Server root, e.g. `https://issues.example.org`.
    pub base_url: String,
    pub project_key: String,
    /// Issues per search page.
    pub page_size: usize,
    /// Extra attempts per page after the first failure.
    pub max_retries: u32,
    /// Custom field holding the story point value.
    pub story_point_field: String,
    /// Bearer token, if the server needs one.
    pub auth_token: Option<String>,
}

impl JiraConfig {
    pub fn new(base_url: &str, project_key: &str) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            project_key: project_key.to_string(),
            page_size: 50,
            max_retries: 2,
            story_point_field: "customfield_10016".to_string(),
            auth_token: None,
        }
    }
}

#[derive(Deserialize)]
struct SearchPage {
    total: usize,
    #[serde(default)]
    issues: Vec<RawIssue>,
}

#[derive(Deserialize)]
struct RawIssue {
    key: String,
    fields: serde_json::Map<String, serde_json::Value>,
}

/// Fetches every issue of a project through the paginated search endpoint.
pub fn fetch_jira(cfg: &JiraConfig) -> Result<IssueDataset, JiraError> {
    if cfg.page_size == 0 {
        return Err(JiraError::BadPageSize);
    }
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into();

    let jql = format!("project={} ORDER BY created ASC", cfg.project_key);
    let mut issues = Vec::new();
    let mut start_at = 0usize;
    loop {
        let url = format!(
            "{}/rest/api/2/search?jql={}&startAt={}&maxResults={}",
            cfg.base_url,
            percent_encode(&jql),
            start_at,
            cfg.page_size
        );
        let page = fetch_page(&agent, cfg, &url)?;
        let got = page.issues.len();
        for raw in page.issues {
            if let Some(issue) = map_issue(cfg, raw)? {
                issues.push(issue);
            }
        }
        start_at += got;
        if got == 0 || start_at >= page.total {
            break;
        }
    }
    Ok(IssueDataset::new(issues)?)
}

fn fetch_page(agent: &ureq::Agent, cfg: &JiraConfig, url: &str) -> Result<SearchPage, JiraError> {
    let mut last_message = String::new();
    for attempt in 0..=cfg.max_retries {
        let mut request = agent.get(url);
        if let Some(token) = &cfg.auth_token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        match request.call() {
            Ok(mut response) => {
                let status = response.status().as_u16();
                match status {
                    200 => {
                        let body = response
                            .body_mut()
                            .read_to_string()
                            .map_err(|e| JiraError::Parse(e.to_string()))?;
                        return serde_json::from_str(&body)
                            .map_err(|e| JiraError::Parse(e.to_string()));
                    }
                    401 | 403 => return Err(JiraError::Credentials { status }),
                    // server-side failures are retried, other client errors
                    // are final
                    500..=599 => last_message = format!("HTTP {status}"),
                    _ => {
                        return Err(JiraError::Http {
                            status,
                            message: format!("GET {url}"),
                        })
                    }
                }
            }
            Err(e) => last_message = e.to_string(),
        }
        if attempt < cfg.max_retries {
            std::thread::sleep(Duration::from_millis(25));
        }
    }
    Err(JiraError::Transport {
        retries: cfg.max_retries,
        message: last_message,
    })
}

fn map_issue(cfg: &JiraConfig, raw: RawIssue) -> Result<Option<Issue>, JiraError> {
    let fields = &raw.fields;
    let story_point = match fields.get(cfg.story_point_field.as_str()) {
        Some(serde_json::Value::Number(n)) => match n.as_f64() {
            Some(v) => v,
            None => return Ok(None),
        },
        _ => return Ok(None),
    };
    let text = |name: &str| -> String {
        fields
            .get(name)
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .to_string()
    };
    let created = fields
        .get("created")
        .and_then(|v| v.as_str())
        .ok_or_else(|| JiraError::Parse(format!("{}: missing created", raw.key)))
        .and_then(parse_jira_timestamp)?;
    let resolved = match fields.get("resolutiondate").and_then(|v| v.as_str()) {
        Some(s) if !s.is_empty() => Some(parse_jira_timestamp(s)?),
        _ => None,
    };
    let issue_type = fields
        .get("issuetype")
        .and_then(|v| v.get("name"))
        .and_then(|v| v.as_str())
        .unwrap_or("Unknown")
        .to_string();
    let components = fields
        .get("components")
        .and_then(|v| v.as_array())
        .map(|items| {
            items
                .iter()
                .filter_map(|c| c.get("name").and_then(|n| n.as_str()))
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default();
    let project_key = fields
        .get("project")
        .and_then(|v| v.get("key"))
        .and_then(|v| v.as_str())
        .unwrap_or(cfg.project_key.as_str())
        .to_string();

    Ok(Some(Issue {
        issue_key: raw.key,
        project_key,
        repository: cfg.base_url.clone(),
        created,
        resolved,
        issue_type,
        components,
        title: text("summary"),
        description: text("description"),
        story_point,
        sp_assignment_count: None,
        fields_changed_after_sp: None,
        is_resolved: resolved.is_some(),
    }))
}

fn parse_jira_timestamp(s: &str) -> Result<DateTime<Utc>, JiraError> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.with_timezone(&Utc));
    }
    // Jira's classic format: 2016-01-02T03:04:05.000+0000
    DateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.3f%z")
        .map(|dt| dt.with_timezone(&Utc))
        .map_err(|_| JiraError::Parse(format!("unparseable timestamp: {s:?}")))
}

/// RFC 3986 query-component encoding: unreserved characters pass through.
fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for byte in s.bytes() {
        match byte {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => {
                out.push(byte as char)
            }
            _ => out.push_str(&format!("%{byte:02X}")),
        }
    }
    out
}

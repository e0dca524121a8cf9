//! Client tests against a scripted in-process HTTP server.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::json;
use spbench_core::corpus::{apply_porru_filter, CorpusError};
use spbench_core::jira::{fetch_jira, JiraConfig, JiraError};

struct Request {
    query: HashMap<String, String>,
    headers: Vec<String>,
}

/// Serves scripted responses on an ephemeral port; the handler maps a
/// request to `(status, json_body)`. The acceptor thread runs until the
/// test process exits.
fn serve<F>(handler: F) -> String
where
    F: Fn(&Request) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() || request_line.is_empty() {
                continue;
            }
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) if line == "\r\n" => break,
                    Ok(_) => headers.push(line.trim_end().to_string()),
                    Err(_) => break,
                }
            }
            let target = request_line.split_whitespace().nth(1).unwrap_or("/");
            let query = target
                .split_once('?')
                .map(|(_, q)| q)
                .unwrap_or("")
                .split('&')
                .filter_map(|pair| pair.split_once('='))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
            let (status, body) = handler(&Request { query, headers });
            let reason = match status {
                200 => "OK",
                401 => "Unauthorized",
                403 => "Forbidden",
                404 => "Not Found",
                _ => "Error",
            };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(response.as_bytes());
            let _ = stream.flush();
        }
    });
    format!("http://{addr}")
}

fn issue_json(i: usize, sp: Option<f64>) -> serde_json::Value {
    json!({
        "key": format!("PRJ-{i}"),
        "fields": {
            "summary": format!("issue number {i}"),
            "description": format!("body of issue {i}"),
            "created": format!("2016-01-01T{:02}:{:02}:{:02}Z", i / 3600, (i / 60) % 60, i % 60),
            "resolutiondate": null,
            "issuetype": {"name": "Bug"},
            "components": [{"name": "core"}],
            "project": {"key": "PRJ"},
            "customfield_10016": sp,
        }
    })
}

fn page_body(total: usize, issues: Vec<serde_json::Value>) -> String {
    json!({"startAt": 0, "maxResults": issues.len(), "total": total, "issues": issues})
        .to_string()
}

#[test]
fn paginates_across_two_pages() {
    let base = serve(|req| {
        let start: usize = req.query["startAt"].parse().unwrap();
        let issues: Vec<_> = (start..start + 50)
            .map(|i| issue_json(i, Some((i % 5 + 1) as f64)))
            .collect();
        (200, page_body(100, issues))
    });
    let mut cfg = JiraConfig::new(&base, "PRJ");
    cfg.page_size = 50;
    let ds = fetch_jira(&cfg).unwrap();
    assert_eq!(ds.len(), 100);
    assert_eq!(ds.project_key(), "PRJ");
    // created-order is re-established regardless of page order
    let times: Vec<_> = ds.issues().iter().map(|i| i.created).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
    // no provenance: unfit for the provenance filter
    assert!(!ds.issues()[0].has_provenance());
    assert!(matches!(
        apply_porru_filter(&ds),
        Err(CorpusError::UnknownProvenance { .. })
    ));
}

#[test]
fn empty_project_yields_empty_dataset() {
    let base = serve(|_| (200, page_body(0, vec![])));
    let ds = fetch_jira(&JiraConfig::new(&base, "PRJ")).unwrap();
    assert!(ds.is_empty());
}

#[test]
fn issues_without_story_points_are_skipped() {
    let base = serve(|_| {
        let issues = vec![
            issue_json(0, Some(3.0)),
            issue_json(1, None),
            issue_json(2, Some(5.0)),
        ];
        (200, page_body(3, issues))
    });
    let ds = fetch_jira(&JiraConfig::new(&base, "PRJ")).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.issues()[0].story_point, 3.0);
    assert_eq!(ds.issues()[0].title, "issue number 0");
    assert_eq!(ds.issues()[0].components, vec!["core"]);
}

#[test]
fn server_failure_on_page_two_is_retried_then_fatal() {
    let attempts = Arc::new(AtomicUsize::new(0));
    let seen = attempts.clone();
    let base = serve(move |req| {
        let start: usize = req.query["startAt"].parse().unwrap();
        if start == 0 {
            let issues: Vec<_> = (0..50).map(|i| issue_json(i, Some(1.0))).collect();
            (200, page_body(100, issues))
        } else {
            seen.fetch_add(1, Ordering::SeqCst);
            (500, "{}".to_string())
        }
    });
    let mut cfg = JiraConfig::new(&base, "PRJ");
    cfg.page_size = 50;
    cfg.max_retries = 3;
    match fetch_jira(&cfg) {
        Err(JiraError::Transport { retries, .. }) => assert_eq!(retries, 3),
        other => panic!("expected transport error, got {other:?}"),
    }
    // one initial attempt plus three retries, page one not re-fetched
    assert_eq!(attempts.load(Ordering::SeqCst), 4);
}

#[test]
fn auth_failures_are_credential_errors_not_retried() {
    let attempts = Arc::new(AtomicUsize::new(0));
    let seen = attempts.clone();
    let base = serve(move |_| {
        seen.fetch_add(1, Ordering::SeqCst);
        (401, "{}".to_string())
    });
    match fetch_jira(&JiraConfig::new(&base, "PRJ")) {
        Err(JiraError::Credentials { status }) => assert_eq!(status, 401),
        other => panic!("expected credential error, got {other:?}"),
    }
    assert_eq!(attempts.load(Ordering::SeqCst), 1);
}

#[test]
fn bearer_token_is_sent() {
    let base = serve(|req| {
        let authed = req
            .headers
            .iter()
            .any(|h| h.eq_ignore_ascii_case("authorization: bearer sesame"));
        if authed {
            (200, page_body(0, vec![]))
        } else {
            (401, "{}".to_string())
        }
    });
    let mut cfg = JiraConfig::new(&base, "PRJ");
    assert!(matches!(
        fetch_jira(&cfg),
        Err(JiraError::Credentials { .. })
    ));
    cfg.auth_token = Some("sesame".to_string());
    assert!(fetch_jira(&cfg).unwrap().is_empty());
}

#[test]
fn resolved_issues_map_resolution_state() {
    let base = serve(|_| {
        let mut issue = issue_json(0, Some(2.0));
        issue["fields"]["resolutiondate"] =
            json!("2016-02-01T00:00:00.000+0000");
        (200, page_body(1, vec![issue]))
    });
    let ds = fetch_jira(&JiraConfig::new(&base, "PRJ")).unwrap();
    let issue = &ds.issues()[0];
    assert!(issue.is_resolved);
    assert_eq!(
        issue.resolved.unwrap(),
        chrono::DateTime::parse_from_rfc3339("2016-02-01T00:00:00Z").unwrap()
    );
}

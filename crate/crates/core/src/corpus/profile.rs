//! Code-snippet detection and per-issue-type corpus profiling.

use regex::Regex;
use std::collections::BTreeMap;
use std::sync::LazyLock;

use super::types::{CorpusProfile, IssueDataset};

// Tracker markup tokens: `{code}`, `{code:java}`, `{noformat}`. An opening
// token is only meaningful once a closing token of the same family follows.
static MARKUP_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{code(?::[^{}\n]*)?\}|\{noformat\}").unwrap());

// One frame of a Java stack trace, e.g. `at com.foo.Bar$Baz.run(Bar.java:42)`.
static STACK_FRAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*at\s+[\w$.<>]+\([^()]*\.java:\d+\)\s*$").unwrap());

#[derive(Debug, PartialEq)]
enum Family {
    Code,
    Noformat,
}

fn family_of(token: &str) -> Family {
    if token.starts_with("{code") {
        Family::Code
    } else {
        Family::Noformat
    }
}

/// Prose and code portions of a text, split on markup regions and stack
/// traces.
#[derive(Debug, Default, PartialEq)]
pub struct CodeSplit {
    pub prose: String,
    pub code: String,
    /// At least one complete markup region or stack-trace run was found.
    pub found: bool,
}

/// Separates complete markup regions and stack-trace runs (two or more
/// consecutive frame lines) from the surrounding prose. An unpaired markup
/// token stays prose.
pub fn split_code_regions(text: &str) -> CodeSplit {
    let mut prose_parts: Vec<&str> = Vec::new();
    let mut code_parts: Vec<&str> = Vec::new();
    let mut found = false;

    let mut cursor = 0;
    let mut open: Option<(Family, usize, usize)> = None; // family, token start, content start
    for token in MARKUP_TOKEN.find_iter(text) {
        match &open {
            None => {
                prose_parts.push(&text[cursor..token.start()]);
                open = Some((family_of(token.as_str()), token.start(), token.end()));
                cursor = token.end();
            }
            Some((family, _, content_start)) => {
                if *family == family_of(token.as_str()) {
                    code_parts.push(&text[*content_start..token.start()]);
                    found = true;
                    open = None;
                    cursor = token.end();
                }
                // a token of the other family inside a region is content
            }
        }
    }
    if let Some((_, token_start, _)) = open {
        // dangling opener: everything from it on is prose
        prose_parts.push(&text[token_start..]);
    } else {
        prose_parts.push(&text[cursor..]);
    }

    // scan the remaining prose for stack-trace runs
    let prose_joined = prose_parts.concat();
    let lines: Vec<&str> = prose_joined.lines().collect();
    let mut prose_lines: Vec<&str> = Vec::new();
    let mut trace_lines: Vec<&str> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if STACK_FRAME.is_match(lines[i]) {
            let mut j = i;
            while j < lines.len() && STACK_FRAME.is_match(lines[j]) {
                j += 1;
            }
            if j - i >= 2 {
                trace_lines.extend(&lines[i..j]);
                found = true;
            } else {
                prose_lines.extend(&lines[i..j]);
            }
            i = j;
        } else {
            prose_lines.push(lines[i]);
            i += 1;
        }
    }

    let mut code = code_parts.join(" ");
    if !trace_lines.is_empty() {
        if !code.is_empty() {
            code.push(' ');
        }
        code.push_str(&trace_lines.join("\n"));
    }
    CodeSplit {
        prose: prose_lines.join("\n"),
        code,
        found,
    }
}

/// True when the text contains a complete markup region or a stack trace.
pub fn detect_code_snippet(text: &str) -> bool {
    split_code_regions(text).found
}

/// Per-issue-type counts, snippet counts (over descriptions), and
/// description token lengths (whitespace tokenization).
pub fn profile(ds: &IssueDataset) -> CorpusProfile {
    let mut issue_type_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut code_snippet_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut description_token_length: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for issue in ds.issues() {
        let ty = issue.issue_type.clone();
        *issue_type_counts.entry(ty.clone()).or_default() += 1;
        code_snippet_counts.entry(ty.clone()).or_default();
        if detect_code_snippet(&issue.description) {
            *code_snippet_counts.get_mut(&ty).unwrap() += 1;
        }
        description_token_length
            .entry(ty)
            .or_default()
            .push(issue.description.split_whitespace().count());
    }
    CorpusProfile {
        issue_type_counts,
        code_snippet_counts,
        description_token_length,
    }
}

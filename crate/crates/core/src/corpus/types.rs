//! Core dataset types: issues, ordered datasets, split plans, profiles.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

use super::CorpusError;

/// One issue report from a tracker, with the provenance flags needed by the
/// stricter dataset filters.
///
/// `sp_assignment_count` and `fields_changed_after_sp` are `None` when the
/// ingestion route could not determine them (for example a plain REST
/// fetch); datasets containing such issues are unfit for provenance-based
/// filtering until the flags are supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub issue_key: String,
    pub project_key: String,
    pub repository: String,
    pub created: DateTime<Utc>,
    pub resolved: Option<DateTime<Utc>>,
    pub issue_type: String,
    pub components: Vec<String>,
    pub title: String,
    pub description: String,
    pub story_point: f64,
    pub sp_assignment_count: Option<u32>,
    pub fields_changed_after_sp: Option<bool>,
    pub is_resolved: bool,
}

impl Issue {
    /// Title and description joined with a single space; the text input for
    /// every estimator.
    pub fn context(&self) -> String {
        if self.description.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.description)
        }
    }

    /// Both provenance flags known.
    pub fn has_provenance(&self) -> bool {
        self.sp_assignment_count.is_some() && self.fields_changed_after_sp.is_some()
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.issue_key.is_empty() {
            return Err("empty issue_key".into());
        }
        if !self.story_point.is_finite() || self.story_point < 0.0 {
            return Err(format!("story_point {} is not a non-negative number", self.story_point));
        }
        if let Some(resolved) = self.resolved {
            if self.created > resolved {
                return Err(format!(
                    "created {} is after resolved {}",
                    self.created, resolved
                ));
            }
        }
        Ok(())
    }
}

/// Issues of one project (or an explicitly pooled multi-project set),
/// always ordered ascending by `(created, issue_key)`.
///
/// The ordering is re-established by every constructor, so index-based
/// split plans are chronological by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueDataset {
    project_key: String,
    repository: String,
    issues: Vec<Issue>,
    pooled: bool,
}

impl IssueDataset {
    /// Single-project dataset; rejects mixed project keys.
    pub fn new(issues: Vec<Issue>) -> Result<Self, CorpusError> {
        let ds = Self::build(issues, false)?;
        Ok(ds)
    }

    /// Multi-project pool (cross-project training sources, repository
    /// pools). `label` names the pool in errors and artifacts.
    pub fn new_pooled(label: &str, issues: Vec<Issue>) -> Result<Self, CorpusError> {
        let mut ds = Self::build(issues, true)?;
        ds.project_key = label.to_string();
        Ok(ds)
    }

    fn build(mut issues: Vec<Issue>, pooled: bool) -> Result<Self, CorpusError> {
        for issue in &issues {
            issue.validate().map_err(|reason| CorpusError::InvalidIssue {
                key: issue.issue_key.clone(),
                reason,
            })?;
        }
        issues.sort_by(|a, b| {
            a.created
                .cmp(&b.created)
                .then_with(|| a.issue_key.cmp(&b.issue_key))
        });
        let mut seen = HashSet::new();
        for issue in &issues {
            if !seen.insert(issue.issue_key.as_str()) {
                return Err(CorpusError::DuplicateKey(issue.issue_key.clone()));
            }
        }
        let (project_key, repository) = match issues.first() {
            Some(first) => (first.project_key.clone(), first.repository.clone()),
            None => (String::new(), String::new()),
        };
        if !pooled {
            for issue in &issues {
                if issue.project_key != project_key {
                    return Err(CorpusError::MixedProjects {
                        first: project_key,
                        other: issue.project_key.clone(),
                    });
                }
            }
        }
        Ok(Self { project_key, repository, issues, pooled })
    }

    /// Same-shape dataset with a filtered/transformed issue list. Ordering
    /// and uniqueness still hold (filtering preserves both; transformations
    /// here never touch keys or timestamps).
    pub(crate) fn with_issues(&self, issues: Vec<Issue>) -> Self {
        Self {
            project_key: self.project_key.clone(),
            repository: self.repository.clone(),
            issues,
            pooled: self.pooled,
        }
    }

    pub fn project_key(&self) -> &str {
        &self.project_key
    }

    pub fn repository(&self) -> &str {
        &self.repository
    }

    pub fn is_pooled(&self) -> bool {
        self.pooled
    }

    pub fn issues(&self) -> &[Issue] {
        &self.issues
    }

    pub fn len(&self) -> usize {
        self.issues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    /// Story points in dataset (chronological) order.
    pub fn story_points(&self) -> Vec<f64> {
        self.issues.iter().map(|i| i.story_point).collect()
    }
}

/// Experimental scenario a split plan was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    WithinProject,
    CrossProjectWithinRepo,
    CrossProjectCrossRepo,
    ChronologicalCross,
    Augmented,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::WithinProject,
        Scenario::CrossProjectWithinRepo,
        Scenario::CrossProjectCrossRepo,
        Scenario::ChronologicalCross,
        Scenario::Augmented,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::WithinProject => "within_project",
            Scenario::CrossProjectWithinRepo => "cross_project_within_repo",
            Scenario::CrossProjectCrossRepo => "cross_project_cross_repo",
            Scenario::ChronologicalCross => "chronological_cross",
            Scenario::Augmented => "augmented",
        }
    }

    /// Accepts the `as_str` names with `-` and `_` interchangeable.
    pub fn parse(s: &str) -> Option<Scenario> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Scenario::ALL.into_iter().find(|v| v.as_str() == norm)
    }
}

/// Story-point cap transformation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CapMode {
    #[default]
    None,
    TrainOnly,
    Global,
}

impl CapMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CapMode::None => "none",
            CapMode::TrainOnly => "train_only",
            CapMode::Global => "global",
        }
    }

    /// Accepts the `as_str` names with `-` and `_` interchangeable.
    pub fn parse(s: &str) -> Option<CapMode> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        [CapMode::None, CapMode::TrainOnly, CapMode::Global]
            .into_iter()
            .find(|v| v.as_str() == norm)
    }
}

/// Named index sets over one or two datasets.
///
/// For `WithinProject` and `Augmented` plans all three index lists refer to
/// a single dataset. For the cross-project scenarios `train`/`validation`
/// index the source dataset and `test` indexes the target dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scenario: Scenario,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub cap_mode: CapMode,
    pub cap_value: Option<f64>,
}

impl SplitPlan {
    /// Checks pairwise disjointness of the three index sets.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        // cross-project test indexes a different dataset, so only
        // train/validation share an index space there
        let same_space = matches!(self.scenario, Scenario::WithinProject | Scenario::Augmented);
        for idx in self.train.iter().chain(&self.validation) {
            if !seen.insert(*idx) {
                return false;
            }
        }
        if same_space {
            for idx in &self.test {
                if !seen.insert(*idx) {
                    return false;
                }
            }
        }
        true
    }
}

/// Per-issue-type corpus statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusProfile {
    pub issue_type_counts: BTreeMap<String, usize>,
    pub code_snippet_counts: BTreeMap<String, usize>,
    pub description_token_length: BTreeMap<String, Vec<usize>>,
}

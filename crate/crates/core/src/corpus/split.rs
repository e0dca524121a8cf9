//! Chronological split construction, cross-project source filtering, and
//! training-pool augmentation.

use chrono::{DateTime, Utc};
use std::collections::HashMap;

use super::types::{CapMode, Issue, IssueDataset, Scenario, SplitPlan};
use super::CorpusError;

/// Minimum filtered-source size below which a chronological cross-project
/// run is refused.
pub const MIN_CHRONOLOGICAL_SOURCE: usize = 200;

/// Splits one project chronologically: the oldest `train_frac` of issues
/// train, the next `val_frac` validate, the remainder tests. Fractions are
/// floored; the remainder goes to the test set.
pub fn chronological_split(
    ds: &IssueDataset,
    train_frac: f64,
    val_frac: f64,
) -> Result<SplitPlan, CorpusError> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(CorpusError::BadFractions { train_frac, val_frac });
    }
    let n = ds.len();
    if n < 5 {
        return Err(CorpusError::DatasetTooSmall { n, min: 5 });
    }
    let n_train = (train_frac * n as f64).floor() as usize;
    let n_val = (val_frac * n as f64).floor() as usize;
    // train_frac + val_frac < 1 guarantees a non-empty test set, but small
    // n can still floor train or validation to nothing
    if n_train == 0 || n_val == 0 {
        return Err(CorpusError::EmptySplitPart {
            n,
            train_frac,
            val_frac,
        });
    }
    Ok(SplitPlan {
        scenario: Scenario::WithinProject,
        train: (0..n_train).collect(),
        validation: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..n).collect(),
        cap_mode: CapMode::None,
        cap_value: None,
    })
}

/// Cross-project plan: the source's oldest 75% trains and newest 25%
/// validates; every target issue tests. The scenario records whether the
/// two projects share a repository.
pub fn cross_project_split(
    source: &IssueDataset,
    target: &IssueDataset,
) -> Result<SplitPlan, CorpusError> {
    if !source.is_pooled() && source.project_key() == target.project_key() {
        return Err(CorpusError::SameProject(target.project_key().to_string()));
    }
    if source.len() < 2 {
        return Err(CorpusError::DatasetTooSmall { n: source.len(), min: 2 });
    }
    if target.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let n = source.len();
    let n_train = (0.75 * n as f64).floor() as usize;
    let scenario = if source.repository() == target.repository() {
        Scenario::CrossProjectWithinRepo
    } else {
        Scenario::CrossProjectCrossRepo
    };
    Ok(SplitPlan {
        scenario,
        train: (0..n_train).collect(),
        validation: (n_train..n).collect(),
        test: (0..target.len()).collect(),
        cap_mode: CapMode::None,
        cap_value: None,
    })
}

/// Retains only source issues created strictly before the target project's
/// start date (the creation time of its earliest issue).
///
/// Callers should refuse training when the result has fewer than
/// [`MIN_CHRONOLOGICAL_SOURCE`] issues.
pub fn chronological_cross_filter(
    source_pool: &IssueDataset,
    target: &IssueDataset,
) -> Result<IssueDataset, CorpusError> {
    let start = target
        .issues()
        .first()
        .ok_or(CorpusError::EmptyDataset)?
        .created;
    let kept = source_pool
        .issues()
        .iter()
        .filter(|i| i.created < start)
        .cloned()
        .collect();
    Ok(source_pool.with_issues(kept))
}

/// Which timestamp rule admits pool issues into an augmented training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentRule {
    /// Pool issue created strictly before the earliest validation issue
    /// (the default).
    #[default]
    CreatedBeforeValidation,
    /// Pool issue resolved strictly before the first test issue was
    /// created.
    ResolvedBeforeTestCreation,
}

/// Extends a within-project plan's training set with every qualifying pool
/// issue, leaving validation and test untouched.
///
/// Returns the merged dataset (target plus admitted pool issues, re-sorted)
/// and the plan re-indexed against it, since the plan's indices must refer
/// to one dataset. The pool must not contain the target project.
pub fn augment_training(
    plan: &SplitPlan,
    data: &IssueDataset,
    repo_pool: &IssueDataset,
    rule: AugmentRule,
) -> Result<(IssueDataset, SplitPlan), CorpusError> {
    if plan.scenario != Scenario::WithinProject {
        return Err(CorpusError::NotWithinProject(plan.scenario));
    }
    if let Some(bad) = repo_pool
        .issues()
        .iter()
        .find(|i| i.project_key == data.project_key())
    {
        return Err(CorpusError::PoolContainsTarget(bad.issue_key.clone()));
    }
    let earliest_validation = plan
        .validation
        .first()
        .map(|&i| data.issues()[i].created)
        .ok_or(CorpusError::EmptyDataset)?;
    let first_test_created = plan
        .test
        .first()
        .map(|&i| data.issues()[i].created)
        .ok_or(CorpusError::EmptyDataset)?;

    let admitted: Vec<Issue> = repo_pool
        .issues()
        .iter()
        .filter(|i| match rule {
            AugmentRule::CreatedBeforeValidation => i.created < earliest_validation,
            AugmentRule::ResolvedBeforeTestCreation => {
                i.resolved.is_some_and(|r| r < first_test_created)
            }
        })
        .cloned()
        .collect();

    let train_keys: Vec<String> = plan
        .train
        .iter()
        .map(|&i| data.issues()[i].issue_key.clone())
        .chain(admitted.iter().map(|i| i.issue_key.clone()))
        .collect();
    let validation_keys: Vec<String> = plan
        .validation
        .iter()
        .map(|&i| data.issues()[i].issue_key.clone())
        .collect();
    let test_keys: Vec<String> = plan
        .test
        .iter()
        .map(|&i| data.issues()[i].issue_key.clone())
        .collect();

    let mut merged: Vec<Issue> = data.issues().to_vec();
    merged.extend(admitted);
    let label = format!("{}+pool", data.project_key());
    let merged = IssueDataset::new_pooled(&label, merged)?;

    let (train, validation, test) = {
        let index_of: HashMap<&str, usize> = merged
            .issues()
            .iter()
            .enumerate()
            .map(|(idx, issue)| (issue.issue_key.as_str(), idx))
            .collect();
        let to_indices = |keys: &[String]| -> Vec<usize> {
            let mut idx: Vec<usize> = keys.iter().map(|k| index_of[k.as_str()]).collect();
            idx.sort_unstable();
            idx
        };
        (
            to_indices(&train_keys),
            to_indices(&validation_keys),
            to_indices(&test_keys),
        )
    };

    Ok((
        merged,
        SplitPlan {
            scenario: Scenario::Augmented,
            train,
            validation,
            test,
            cap_mode: plan.cap_mode,
            cap_value: plan.cap_value,
        },
    ))
}

/// Independent post-hoc chronology check: keys of `issues` created at or
/// after `boundary`.
///
/// Deliberately a bare linear scan over raw issue data so it shares no
/// logic with split construction; used to audit persisted run artifacts.
pub fn creation_violations<'a>(
    issues: impl IntoIterator<Item = &'a Issue>,
    boundary: DateTime<Utc>,
) -> Vec<String> {
    issues
        .into_iter()
        .filter(|i| i.created >= boundary)
        .map(|i| i.issue_key.clone())
        .collect()
}

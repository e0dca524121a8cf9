//! Dataset filters and the story-point cap transformation.

use super::types::{CapMode, IssueDataset};
use super::CorpusError;

/// The planning-poker card values admitted by the provenance filter.
pub const POKER_CARDS: [f64; 11] = [0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0, 13.0, 20.0, 40.0, 100.0];

/// Keeps issues with a plausible story point: greater than 0 and at most
/// 100.
pub fn apply_choet_filter(ds: &IssueDataset) -> IssueDataset {
    let kept = ds
        .issues()
        .iter()
        .filter(|i| i.story_point > 0.0 && i.story_point <= 100.0)
        .cloned()
        .collect();
    ds.with_issues(kept)
}

/// Keeps issues whose story point is trustworthy by provenance: assigned
/// exactly once, never edited afterwards, resolved, and on a planning-poker
/// card value.
///
/// Requires every issue to carry known provenance flags; datasets from
/// sources that cannot supply them are rejected whole.
pub fn apply_porru_filter(ds: &IssueDataset) -> Result<IssueDataset, CorpusError> {
    if let Some(bad) = ds.issues().iter().find(|i| !i.has_provenance()) {
        return Err(CorpusError::UnknownProvenance {
            dataset: ds.project_key().to_string(),
            key: bad.issue_key.clone(),
        });
    }
    let kept = ds
        .issues()
        .iter()
        .filter(|i| {
            i.sp_assignment_count == Some(1)
                && i.is_resolved
                && i.fields_changed_after_sp == Some(false)
                && POKER_CARDS.contains(&i.story_point)
        })
        .cloned()
        .collect();
    Ok(ds.with_issues(kept))
}

/// Nearest-rank percentile: the value at 1-based rank `ceil(p/100 * n)` of
/// the sorted list.
pub fn nearest_rank_percentile(values: &[f64], percentile: f64) -> Result<f64, CorpusError> {
    if values.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(CorpusError::BadPercentile(percentile));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((percentile / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

/// Result of a cap application.
#[derive(Debug, Clone)]
pub struct CapOutcome {
    pub dataset: IssueDataset,
    /// The percentile value used; `None` when `mode` was `None`.
    pub cap_value: Option<f64>,
    /// How many issues had their story point reduced.
    pub affected: usize,
}

/// Replaces story points above the dataset's nearest-rank percentile value
/// with that value.
///
/// The cap is computed over the dataset passed in: for `Global`, pass the
/// whole dataset; for `TrainOnly`, pass the training subset (the cap then
/// applies to training issues only, which is exactly what this returns).
pub fn cap_story_points(
    ds: &IssueDataset,
    mode: CapMode,
    percentile: f64,
) -> Result<CapOutcome, CorpusError> {
    if ds.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    if mode == CapMode::None {
        return Ok(CapOutcome { dataset: ds.clone(), cap_value: None, affected: 0 });
    }
    let cap = nearest_rank_percentile(&ds.story_points(), percentile)?;
    let mut affected = 0;
    let capped = ds
        .issues()
        .iter()
        .map(|issue| {
            if issue.story_point > cap {
                affected += 1;
                let mut capped = issue.clone();
                capped.story_point = cap;
                capped
            } else {
                issue.clone()
            }
        })
        .collect();
    Ok(CapOutcome { dataset: ds.with_issues(capped), cap_value: Some(cap), affected })
}

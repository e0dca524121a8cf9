//! Naive reference estimators: mean, median, and seeded random guessing.

use rand::Rng;
use thiserror::Error;

use crate::corpus::Issue;
use crate::metrics::{MetricsError, PredictionEntry, PredictionSet};
use crate::rng;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("training story points are empty")]
    EmptyTraining,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Settings shared by the deterministic baselines.
#[derive(Debug, Clone, Copy)]
pub struct BaselineConfig {
    /// Adds 1.0 to mean/median predictions, reproducing a known flaw of an
    /// earlier study's baseline implementation. Off by default; only the
    /// mean and median estimators honour it.
    pub legacy_offset: bool,
    pub rng_seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { legacy_offset: false, rng_seed: 0 }
    }
}

fn constant_predictions(
    test: &[Issue],
    value: f64,
) -> Result<PredictionSet, MetricsError> {
    PredictionSet::new(
        test.iter()
            .map(|issue| PredictionEntry {
                issue_key: issue.issue_key.clone(),
                actual: issue.story_point,
                predicted: value,
            })
            .collect(),
    )
}

/// Predicts the mean training story point for every test issue.
pub fn mean_estimator(
    train_sps: &[f64],
    test: &[Issue],
    cfg: &BaselineConfig,
) -> Result<PredictionSet, BaselineError> {
    if train_sps.is_empty() {
        return Err(BaselineError::EmptyTraining);
    }
    let mean = train_sps.iter().sum::<f64>() / train_sps.len() as f64;
    let offset = if cfg.legacy_offset { 1.0 } else { 0.0 };
    Ok(constant_predictions(test, mean + offset)?)
}

/// Predicts the median training story point (even count: average of the
/// middle two) for every test issue.
pub fn median_estimator(
    train_sps: &[f64],
    test: &[Issue],
    cfg: &BaselineConfig,
) -> Result<PredictionSet, BaselineError> {
    if train_sps.is_empty() {
        return Err(BaselineError::EmptyTraining);
    }
    let mut sorted = train_sps.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = crate::metrics::median_of_sorted(&sorted);
    let offset = if cfg.legacy_offset { 1.0 } else { 0.0 };
    Ok(constant_predictions(test, median + offset)?)
}

/// Predicts a uniform draw from the training story points for each test
/// issue.
///
/// Draws are keyed by `(seed, issue_key)`: reproducible for a fixed seed,
/// independent across issues, and stable under test-set reordering. The
/// guessing pool is the training multiset, so a test issue can never draw
/// itself (train and test are disjoint).
pub fn random_guess(
    train_sps: &[f64],
    test: &[Issue],
    seed: u64,
) -> Result<PredictionSet, BaselineError> {
    if train_sps.is_empty() {
        return Err(BaselineError::EmptyTraining);
    }
    let entries = test
        .iter()
        .map(|issue| {
            let mut stream = rng::stream(rng::combine(seed, rng::fnv1a64(&issue.issue_key)));
            PredictionEntry {
                issue_key: issue.issue_key.clone(),
                actual: issue.story_point,
                predicted: train_sps[stream.gen_range(0..train_sps.len())],
            }
        })
        .collect();
    Ok(PredictionSet::new(entries)?)
}

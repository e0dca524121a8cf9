//! Accuracy metrics over paired (actual, predicted) story points.
//!
//! Three measures: mean absolute error, median absolute error, and
//! standardized accuracy. Standardized accuracy rescales a predictor's MAE
//! against the expected MAE of uninformed random guessing over the training
//! story points, so 0 means "no better than chance" and 100 means perfect.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction set is empty")]
    EmptySet,
    #[error("duplicate issue key in prediction set: {0}")]
    DuplicateKey(String),
    #[error("training story points are empty")]
    EmptyTraining,
    #[error("runs must be >= 1")]
    NoRuns,
    #[error("random-guess MAE is zero (constant data); standardized accuracy is undefined")]
    UndefinedSa,
}

/// One scored test item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub issue_key: String,
    pub actual: f64,
    pub predicted: f64,
}

/// Paired actual/predicted story points for one (project, method) test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    entries: Vec<PredictionEntry>,
}

impl PredictionSet {
    /// Builds a set, rejecting duplicate issue keys.
    pub fn new(entries: Vec<PredictionEntry>) -> Result<Self, MetricsError> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.issue_key.as_str()) {
                return Err(MetricsError::DuplicateKey(e.issue_key.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[PredictionEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-item absolute errors, in entry order.
    pub fn abs_errors(&self) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| (e.actual - e.predicted).abs())
            .collect()
    }
}

/// Metric values for one evaluated prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub mdae: f64,
    /// Standardized accuracy on the 0..100 scale (negative when worse than
    /// random guessing).
    pub sa: f64,
    /// Mean MAE of the random-guess reference runs.
    pub mae_random_mean: f64,
    pub runs: u32,
}

/// Mean absolute error.
///
/// Errors are summed in sorted order so the result is bit-identical under
/// any permutation of the entries.
pub fn mae(p: &PredictionSet) -> Result<f64, MetricsError> {
    if p.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut errs = p.abs_errors();
    errs.sort_by(f64::total_cmp);
    Ok(errs.iter().sum::<f64>() / p.len() as f64)
}

/// Median absolute error; an even count averages the two middle values.
pub fn mdae(p: &PredictionSet) -> Result<f64, MetricsError> {
    if p.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut errs = p.abs_errors();
    errs.sort_by(f64::total_cmp);
    Ok(median_of_sorted(&errs))
}

pub(crate) fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Standardized accuracy: `(1 - mae / mae_random_mean) * 100`.
///
/// The reference `mae_random_mean` is the mean MAE of `runs` independent
/// random-guess prediction sets over the same test items, each guess drawn
/// uniformly from `train_sps`. Draws are keyed by `(seed, run, issue_key)`,
/// so the report is identical for any permutation of the entries and any
/// subset sharing the seed.
pub fn sa(
    p: &PredictionSet,
    train_sps: &[f64],
    runs: u32,
    seed: u64,
) -> Result<EvalReport, MetricsError> {
    if runs == 0 {
        return Err(MetricsError::NoRuns);
    }
    if train_sps.is_empty() {
        return Err(MetricsError::EmptyTraining);
    }
    let mae_v = mae(p)?;
    let mdae_v = mdae(p)?;

    let mut total = 0.0;
    let mut run_errs = vec![0.0; p.len()];
    for run in 0..runs {
        let run_seed = rng::combine(seed, u64::from(run));
        for (slot, e) in run_errs.iter_mut().zip(p.entries()) {
            let mut item = rng::stream(rng::combine(run_seed, rng::fnv1a64(&e.issue_key)));
            let guess = train_sps[item.gen_range(0..train_sps.len())];
            *slot = (e.actual - guess).abs();
        }
        // sorted summation keeps the report permutation-invariant
        run_errs.sort_by(f64::total_cmp);
        total += run_errs.iter().sum::<f64>() / p.len() as f64;
    }
    let mae_p0 = total / f64::from(runs);
    if mae_p0 == 0.0 {
        return Err(MetricsError::UndefinedSa);
    }
    Ok(EvalReport {
        mae: mae_v,
        mdae: mdae_v,
        sa: (1.0 - mae_v / mae_p0) * 100.0,
        mae_random_mean: mae_p0,
        runs,
    })
}

//! Issue-tracker dataset handling: ingestion, filtering, story-point
//! capping, chronological splits, augmentation, and corpus profiling.
//!
//! Datasets are immutable once constructed and always ordered by
//! `(created, issue_key)`, so every split built from indices is
//! chronological by construction and all operations are deterministic.

mod filter;
mod ingest;
mod profile;
mod split;
mod types;

pub use filter::{
    apply_choet_filter, apply_porru_filter, cap_story_points, nearest_rank_percentile,
    CapOutcome, POKER_CARDS,
};
pub use ingest::{ingest_csv, write_csv, IngestOutcome, RowError, CSV_HEADER};
pub use profile::{detect_code_snippet, profile, split_code_regions, CodeSplit};
pub use split::{
    augment_training, chronological_cross_filter, chronological_split, creation_violations,
    cross_project_split, AugmentRule, MIN_CHRONOLOGICAL_SOURCE,
};
pub use types::{CapMode, CorpusProfile, Issue, IssueDataset, Scenario, SplitPlan};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("csv header mismatch: expected {expected}, found {found}")]
    Schema { expected: String, found: String },
    #[error("io: {0}")]
    Io(String),
    #[error("duplicate issue key: {0}")]
    DuplicateKey(String),
    #[error("invalid issue {key}: {reason}")]
    InvalidIssue { key: String, reason: String },
    #[error("dataset mixes projects {first} and {other}; use a pooled dataset")]
    MixedProjects { first: String, other: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has {n} issues, need at least {min}")]
    DatasetTooSmall { n: usize, min: usize },
    #[error("source and target are the same project: {0}")]
    SameProject(String),
    #[error("dataset {dataset} has unknown provenance flags (first: {key}); unfit for provenance filtering")]
    UnknownProvenance { dataset: String, key: String },
    #[error("percentile must lie in [0, 100], got {0}")]
    BadPercentile(f64),
    #[error("split fractions invalid: train {train_frac}, validation {val_frac}")]
    BadFractions { train_frac: f64, val_frac: f64 },
    #[error("fractions ({train_frac}, {val_frac}) floor to an empty part on {n} issues")]
    EmptySplitPart { n: usize, train_frac: f64, val_frac: f64 },
    #[error("augmentation requires a within-project plan, got {0:?}")]
    NotWithinProject(Scenario),
    #[error("pool contains target-project issue {0}")]
    PoolContainsTarget(String),
}

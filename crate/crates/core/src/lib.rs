//! Benchmarking toolkit for story-point effort estimators.
//!
//! The crate covers the full experimental loop: issue-tracker dataset
//! ingestion and filtering ([`corpus`], [`jira`]), chronological split
//! construction ([`corpus`]), the estimators themselves ([`baselines`],
//! [`tfidf`], [`deepse`]), accuracy metrics ([`metrics`]), rank-based
//! statistical comparison ([`stats`]), and an experiment runner that
//! persists reproducible artifacts ([`bench`]).
//!
//! Every stochastic component takes an explicit seed and is deterministic
//! given one; reruns with identical configuration produce byte-identical
//! metric files.

pub mod baselines;
pub mod bench;
pub mod corpus;
pub mod deepse;
pub mod jira;
pub mod metrics;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tfidf;

//! Experiment orchestration: builds scenario splits over ingested
//! datasets, runs every requested estimator, scores and compares the
//! results, and persists all artifacts under a content-addressed run
//! directory.
//!
//! A run is fully determined by its [`ExperimentConfig`]: the run
//! directory name is a digest of the config (minus the output root), a
//! rerun with an identical config is idempotent, and a directory whose
//! stored config differs is refused rather than overwritten. Metric CSVs
//! use deterministic formatting so a rerun reproduces them byte for byte;
//! the timing file is the one deliberately volatile output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{self, BaselineConfig};
use crate::corpus::{
    augment_training, cap_story_points, chronological_cross_filter, chronological_split,
    creation_violations, cross_project_split, ingest_csv, nearest_rank_percentile, AugmentRule,
    CapMode, CorpusError, Issue, IssueDataset, Scenario, SplitPlan, MIN_CHRONOLOGICAL_SOURCE,
};
use crate::deepse::{self, DeepSEConfig};
use crate::metrics::{sa, EvalReport, MetricsError, PredictionSet};
use crate::stats::{compare_methods, StatConfig, StatTestResult, StatsError, WilcoxonMethod};
use crate::tfidf::{TfidfSvmConfig, TfidfSvmModel};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error("run directory {0} already holds a different configuration")]
    RunDirCollision(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("serialize: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("chronology audit failed for {project}: training issues {keys:?} created on or after the boundary")]
    Chronology { project: String, keys: Vec<String> },
}

fn io_err(path: &Path, source: std::io::Error) -> BenchError {
    BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Estimators the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    Mean,
    Median,
    TfidfSvm,
    Deepse,
    DeepseNopretrain,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Random,
        Method::Mean,
        Method::Median,
        Method::TfidfSvm,
        Method::Deepse,
        Method::DeepseNopretrain,
    ];

    /// Stable identifier used in config files, CSV columns, and file names.
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Mean => "mean",
            Method::Median => "median",
            Method::TfidfSvm => "tfidf_svm",
            Method::Deepse => "deepse",
            Method::DeepseNopretrain => "deepse_nopretrain",
        }
    }

    /// Human-facing name used in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Random => "Random",
            Method::Mean => "Mean",
            Method::Median => "Median",
            Method::TfidfSvm => "TF/IDF-SVM",
            Method::Deepse => "Deep-SE",
            Method::DeepseNopretrain => "Deep-SE (no pretrain)",
        }
    }

    /// Methods whose output depends on a seed; these run once per
    /// configured seed rather than once.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Method::Random | Method::Deepse | Method::DeepseNopretrain)
    }

    pub fn parse(s: &str) -> Option<Method> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL.into_iter().find(|m| m.as_str() == norm)
    }
}

fn default_cap_percentile() -> f64 {
    90.0
}

fn default_sa_runs() -> u32 {
    1000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Full description of one benchmark run.
///
/// Every field has a default so configs can stay partial and command-line
/// flags can fill the rest; [`validate`](Self::validate) is the gate that
/// decides whether the combined result can actually run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: Scenario,
    /// Dataset CSVs, in scenario order: within_project takes any number of
    /// projects, the cross scenarios take [source, target], and augmented
    /// takes [target, pool...].
    #[serde(default)]
    pub datasets: Vec<PathBuf>,
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub cap_mode: CapMode,
    #[serde(default = "default_cap_percentile")]
    pub cap_percentile: f64,
    /// Reproduces the +1 bias of a flawed mean/median baseline
    /// implementation; off by default.
    #[serde(default)]
    pub legacy_offset: bool,
    /// Seeds for stochastic methods. The first is the canonical seed whose
    /// predictions feed the statistical comparison.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub tfidf: TfidfSvmConfig,
    #[serde(default)]
    pub deepse: DeepSEConfig,
    /// Random-guess reference runs behind each standardized accuracy.
    #[serde(default = "default_sa_runs")]
    pub sa_runs: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_value(serde_json::Value::Object(serde_json::Map::new()))
            .expect("all fields have serde defaults")
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.methods.is_empty() {
            return Err(BenchError::Config("at least one method is required".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(BenchError::Config(format!(
                    "method {} listed twice",
                    m.as_str()
                )));
            }
        }
        if self.seeds.is_empty() && self.methods.iter().any(|m| m.is_stochastic()) {
            return Err(BenchError::Config(
                "stochastic methods need at least one seed".into(),
            ));
        }
        let n = self.datasets.len();
        let dataset_rule = match self.scenario {
            Scenario::WithinProject => n >= 1,
            Scenario::CrossProjectWithinRepo
            | Scenario::CrossProjectCrossRepo
            | Scenario::ChronologicalCross => n == 2,
            Scenario::Augmented => n >= 2,
        };
        if !dataset_rule {
            return Err(BenchError::Config(format!(
                "scenario {} cannot run on {} dataset(s)",
                self.scenario.as_str(),
                n
            )));
        }
        if self.cap_mode != CapMode::None && self.scenario != Scenario::WithinProject {
            return Err(BenchError::Config(
                "story-point caps only apply to the within_project scenario".into(),
            ));
        }
        if !(0.0..=100.0).contains(&self.cap_percentile) {
            return Err(BenchError::Config(format!(
                "cap percentile {} outside [0, 100]",
                self.cap_percentile
            )));
        }
        if self.sa_runs == 0 {
            return Err(BenchError::Config(
                "standardized accuracy needs at least one reference run".into(),
            ));
        }
        Ok(())
    }

    /// Seed whose predictions represent each stochastic method in tables
    /// and statistical tests. Deterministic-only configs fall back to 0.
    pub fn canonical_seed(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    pub fn from_json_str(text: &str) -> Result<Self, BenchError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Parses the `key = value` config format. Keys mirror the JSON field
    /// names; dotted keys (`tfidf.k`, `deepse.embed_dim`) set nested
    /// fields, and `datasets`, `methods`, and `seeds` take comma-separated
    /// lists. Lines starting with `#` are comments.
    pub fn from_key_values(text: &str) -> Result<Self, BenchError> {
        let mut root = serde_json::Map::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                BenchError::Config(format!("line {}: expected key = value", idx + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let parsed = if matches!(key, "datasets" | "methods" | "seeds") {
                serde_json::Value::Array(
                    value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(parse_scalar)
                        .collect(),
                )
            } else {
                parse_scalar(value)
            };
            match key.split_once('.') {
                None => {
                    root.insert(key.to_string(), parsed);
                }
                Some((outer, inner)) => {
                    let nested = root
                        .entry(outer.to_string())
                        .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()));
                    match nested.as_object_mut() {
                        Some(map) => {
                            map.insert(inner.to_string(), parsed);
                        }
                        None => {
                            return Err(BenchError::Config(format!(
                                "key {key} mixes scalar and nested values"
                            )))
                        }
                    }
                }
            }
        }
        // dotted keys set single fields, so fill the rest of a partially
        // specified estimator section from its defaults
        for (key, defaults) in [
            ("tfidf", serde_json::to_value(TfidfSvmConfig::default())?),
            ("deepse", serde_json::to_value(DeepSEConfig::default())?),
        ] {
            if let Some(serde_json::Value::Object(partial)) = root.get(key) {
                let mut merged = defaults.as_object().expect("config sections are objects").clone();
                for (k, v) in partial {
                    merged.insert(k.clone(), v.clone());
                }
                root.insert(key.to_string(), serde_json::Value::Object(merged));
            }
        }
        Ok(serde_json::from_value(serde_json::Value::Object(root))?)
    }

    /// Loads a config file, accepting either JSON or `key = value` lines.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        if text.trim_start().starts_with('{') {
            Self::from_json_str(&text)
        } else {
            Self::from_key_values(&text)
        }
    }
}

fn parse_scalar(s: &str) -> serde_json::Value {
    if s == "true" {
        return serde_json::Value::Bool(true);
    }
    if s == "false" {
        return serde_json::Value::Bool(false);
    }
    if let Ok(n) = s.parse::<u64>() {
        return serde_json::Value::Number(n.into());
    }
    if let Ok(n) = s.parse::<i64>() {
        return serde_json::Value::Number(n.into());
    }
    if let Ok(f) = s.parse::<f64>() {
        if let Some(n) = serde_json::Number::from_f64(f) {
            return serde_json::Value::Number(n);
        }
    }
    serde_json::Value::String(s.to_string())
}

/// Digest naming the run directory. The output root is excluded so moving
/// the artifact tree does not change run identity; everything else,
/// including hyperparameters, is covered.
pub fn config_digest(cfg: &ExperimentConfig) -> String {
    let hex: String = Sha256::digest(canonical_config(cfg).to_string().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    hex[..12].to_string()
}

fn canonical_config(cfg: &ExperimentConfig) -> serde_json::Value {
    let mut value = serde_json::to_value(cfg).expect("config serializes");
    value
        .as_object_mut()
        .expect("config is an object")
        .remove("output_dir");
    value
}

/// One evaluation unit: a split plan over `data`, the resolved test
/// issues, and an optional chronology boundary audited after the plan is
/// built (set for the chronological-cross and augmented scenarios).
#[derive(Debug, Clone)]
pub struct ProjectRun {
    pub label: String,
    pub data: IssueDataset,
    pub plan: SplitPlan,
    pub test: Vec<Issue>,
    pub chronology_boundary: Option<DateTime<Utc>>,
}

impl ProjectRun {
    pub fn train_issues(&self) -> Vec<&Issue> {
        self.plan
            .train
            .iter()
            .map(|&i| &self.data.issues()[i])
            .collect()
    }

    pub fn train_story_points(&self) -> Vec<f64> {
        self.plan
            .train
            .iter()
            .map(|&i| self.data.issues()[i].story_point)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionArtifact {
    pub project: String,
    pub method: Method,
    pub seed: u64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub project: String,
    pub method: Method,
    pub seed: u64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatRow {
    pub project: String,
    pub result: StatTestResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRow {
    pub project: String,
    pub method: Method,
    pub seed: u64,
    pub seconds: f64,
    /// Epochs actually trained; absent for methods without an epoch loop.
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureNote {
    pub project: String,
    pub method: Method,
    pub seed: u64,
    pub message: String,
}

/// Everything a finished (possibly partial) run produced. Serialized as
/// `manifest.json`; artifact paths are recorded only after a successful
/// write, so every listed file exists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub run_dir: PathBuf,
    pub predictions: Vec<PredictionArtifact>,
    pub evals: Vec<EvalRow>,
    pub stats: Vec<StatRow>,
    pub timings: Vec<TimingRow>,
    pub failures: Vec<FailureNote>,
    /// The evaluated splits, kept for post-hoc auditing; not serialized.
    #[serde(skip)]
    pub project_runs: Vec<ProjectRun>,
}

impl RunRecord {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn within_run(ds: &IssueDataset, cfg: &ExperimentConfig) -> Result<ProjectRun, BenchError> {
    let (data, plan) = match cfg.cap_mode {
        CapMode::None => (ds.clone(), chronological_split(ds, 0.6, 0.2)?),
        // the cap value comes from the whole dataset and applies everywhere,
        // so capping before the split keeps the indices valid
        CapMode::Global => {
            let outcome = cap_story_points(ds, CapMode::Global, cfg.cap_percentile)?;
            let mut plan = chronological_split(&outcome.dataset, 0.6, 0.2)?;
            plan.cap_mode = CapMode::Global;
            plan.cap_value = outcome.cap_value;
            (outcome.dataset, plan)
        }
        // the cap value comes from the training subset and only training
        // issues are rewritten; validation and test stay untouched
        CapMode::TrainOnly => {
            let mut plan = chronological_split(ds, 0.6, 0.2)?;
            let train_sps: Vec<f64> = plan.train.iter().map(|&i| ds.issues()[i].story_point).collect();
            let cap = nearest_rank_percentile(&train_sps, cfg.cap_percentile)?;
            let mut issues = ds.issues().to_vec();
            for &i in &plan.train {
                if issues[i].story_point > cap {
                    issues[i].story_point = cap;
                }
            }
            plan.cap_mode = CapMode::TrainOnly;
            plan.cap_value = Some(cap);
            (ds.with_issues(issues), plan)
        }
    };
    let test = plan.test.iter().map(|&i| data.issues()[i].clone()).collect();
    Ok(ProjectRun {
        label: data.project_key().to_string(),
        data,
        plan,
        test,
        chronology_boundary: None,
    })
}

/// Builds the evaluation units the configured scenario implies, applying
/// caps, cross-project filters, and augmentation. Method and seed settings
/// are not consulted, so this also serves split inspection.
pub fn build_project_runs(
    cfg: &ExperimentConfig,
    datasets: &[IssueDataset],
) -> Result<Vec<ProjectRun>, BenchError> {
    match cfg.scenario {
        Scenario::WithinProject => datasets.iter().map(|ds| within_run(ds, cfg)).collect(),
        Scenario::CrossProjectWithinRepo | Scenario::CrossProjectCrossRepo => {
            let (source, target) = (&datasets[0], &datasets[1]);
            let plan = cross_project_split(source, target)?;
            if plan.scenario != cfg.scenario {
                return Err(BenchError::Config(format!(
                    "repositories imply {}, config says {}",
                    plan.scenario.as_str(),
                    cfg.scenario.as_str()
                )));
            }
            Ok(vec![ProjectRun {
                label: format!("{}-to-{}", source.project_key(), target.project_key()),
                data: source.clone(),
                plan,
                test: target.issues().to_vec(),
                chronology_boundary: None,
            }])
        }
        Scenario::ChronologicalCross => {
            let (source, target) = (&datasets[0], &datasets[1]);
            let filtered = chronological_cross_filter(source, target)?;
            if filtered.len() < MIN_CHRONOLOGICAL_SOURCE {
                return Err(CorpusError::DatasetTooSmall {
                    n: filtered.len(),
                    min: MIN_CHRONOLOGICAL_SOURCE,
                }
                .into());
            }
            let mut plan = cross_project_split(&filtered, target)?;
            plan.scenario = Scenario::ChronologicalCross;
            let boundary = target.issues()[0].created;
            Ok(vec![ProjectRun {
                label: format!("{}-to-{}", source.project_key(), target.project_key()),
                data: filtered,
                plan,
                test: target.issues().to_vec(),
                chronology_boundary: Some(boundary),
            }])
        }
        Scenario::Augmented => {
            let target = &datasets[0];
            let pool_issues: Vec<Issue> = datasets[1..]
                .iter()
                .flat_map(|ds| ds.issues().iter().cloned())
                .collect();
            let pool = IssueDataset::new_pooled("pool", pool_issues)?;
            let base = chronological_split(target, 0.6, 0.2)?;
            let (merged, plan) =
                augment_training(&base, target, &pool, AugmentRule::CreatedBeforeValidation)?;
            let boundary = plan
                .validation
                .iter()
                .map(|&i| merged.issues()[i].created)
                .min()
                .expect("validation part is non-empty");
            let test = plan.test.iter().map(|&i| merged.issues()[i].clone()).collect();
            Ok(vec![ProjectRun {
                label: target.project_key().to_string(),
                data: merged,
                plan,
                test,
                chronology_boundary: Some(boundary),
            }])
        }
    }
}

/// Wall-clock seconds and epoch count for methods that train a model.
type Timing = (f64, Option<usize>);

fn run_method(
    run: &ProjectRun,
    method: Method,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<(PredictionSet, Option<Timing>), String> {
    let train_sps = run.train_story_points();
    let baseline_cfg = BaselineConfig {
        legacy_offset: cfg.legacy_offset,
        rng_seed: seed,
    };
    match method {
        Method::Random => baselines::random_guess(&train_sps, &run.test, seed)
            .map(|p| (p, None))
            .map_err(|e| e.to_string()),
        Method::Mean => baselines::mean_estimator(&train_sps, &run.test, &baseline_cfg)
            .map(|p| (p, None))
            .map_err(|e| e.to_string()),
        Method::Median => baselines::median_estimator(&train_sps, &run.test, &baseline_cfg)
            .map(|p| (p, None))
            .map_err(|e| e.to_string()),
        Method::TfidfSvm => {
            let train: Vec<Issue> = run.train_issues().into_iter().cloned().collect();
            let started = Instant::now();
            let model = TfidfSvmModel::fit(&train, &cfg.tfidf).map_err(|e| e.to_string())?;
            let seconds = started.elapsed().as_secs_f64();
            let preds = model.predict(&run.test).map_err(|e| e.to_string())?;
            Ok((preds, Some((seconds, None))))
        }
        Method::Deepse | Method::DeepseNopretrain => {
            let deep_cfg = DeepSEConfig {
                seed,
                pretrain: method == Method::Deepse,
                ..cfg.deepse
            };
            let started = Instant::now();
            let model = deepse::train(&run.plan, &run.data, &deep_cfg).map_err(|e| e.to_string())?;
            let seconds = started.elapsed().as_secs_f64();
            let preds = deepse::predict_deepse(&model, &run.test).map_err(|e| e.to_string())?;
            Ok((preds, Some((seconds, Some(model.trace.len())))))
        }
    }
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect()
}

fn prediction_file_name(label: &str, method: Method, seed: u64) -> String {
    if method.is_stochastic() {
        format!("{}_{}_s{}.csv", slug(label), method.as_str(), seed)
    } else {
        format!("{}_{}.csv", slug(label), method.as_str())
    }
}

fn write_prediction_csv(path: &Path, preds: &PredictionSet) -> Result<(), BenchError> {
    let mut out = String::from("issue_key,actual,predicted\n");
    for e in preds.entries() {
        out.push_str(&format!("{},{},{}\n", e.issue_key, e.actual, e.predicted));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

fn wilcoxon_method_str(m: WilcoxonMethod) -> &'static str {
    match m {
        WilcoxonMethod::Auto => "auto",
        WilcoxonMethod::Exact => "exact",
        WilcoxonMethod::Approximate => "approximate",
    }
}

fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("project,method,seed,mae,mdae,sa,mae_random_mean,runs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.project,
            r.method.as_str(),
            r.seed,
            r.report.mae,
            r.report.mdae,
            r.report.sa,
            r.report.mae_random_mean,
            r.report.runs
        ));
    }
    out
}

fn stats_csv(rows: &[StatRow]) -> String {
    let mut out = String::from(
        "project,method_a,method_b,p_value,a12,magnitude,method_used,rank_sum_first,m,n_obs,alpha,alpha_used,significant_raw,significant\n",
    );
    for r in rows {
        let s = &r.result;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.project,
            s.method_a,
            s.method_b,
            s.p_value,
            s.a12,
            s.magnitude.letter(),
            wilcoxon_method_str(s.method_used),
            s.rank_sum_first,
            s.m,
            s.n_obs,
            s.alpha,
            s.alpha_used,
            s.significant_raw,
            s.significant
        ));
    }
    out
}

fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("project,method,seed,seconds,epochs\n");
    for r in rows {
        let epochs = r.epochs.map(|e| e.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.project,
            r.method.as_str(),
            r.seed,
            r.seconds,
            epochs
        ));
    }
    out
}

/// Runs the configured experiment end to end.
///
/// Ingests the datasets, builds one [`ProjectRun`] per evaluation unit,
/// audits chronology boundaries, executes every (method, seed) cell,
/// scores each prediction set, compares methods pairwise on the canonical
/// seed, and persists predictions, metric CSVs, timing, and a manifest
/// under `output_dir/<digest>`. A failing cell is recorded in the failure
/// list and the run continues; structural problems (bad config, unreadable
/// data, refused run directory) abort instead.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord, BenchError> {
    cfg.validate()?;

    let mut datasets = Vec::new();
    for path in &cfg.datasets {
        let outcome = ingest_csv(path)?;
        if let Some(first) = outcome.row_errors.first() {
            return Err(BenchError::Config(format!(
                "{}: {} malformed row(s), first at line {}: {}",
                path.display(),
                outcome.row_errors.len(),
                first.line,
                first.message
            )));
        }
        datasets.push(outcome.dataset);
    }
    for (i, ds) in datasets.iter().enumerate() {
        if datasets[..i].iter().any(|d| d.project_key() == ds.project_key()) {
            return Err(BenchError::Config(format!(
                "dataset {} appears twice",
                ds.project_key()
            )));
        }
    }

    let runs = build_project_runs(cfg, &datasets)?;
    // audit with a scan that shares no logic with plan construction
    for run in &runs {
        if let Some(boundary) = run.chronology_boundary {
            let violations = creation_violations(run.train_issues(), boundary);
            if !violations.is_empty() {
                return Err(BenchError::Chronology {
                    project: run.label.clone(),
                    keys: violations,
                });
            }
        }
    }

    let run_dir = cfg.output_dir.join(config_digest(cfg));
    let config_path = run_dir.join("config.json");
    if config_path.exists() {
        let stored = fs::read_to_string(&config_path).map_err(|e| io_err(&config_path, e))?;
        let stored: ExperimentConfig = serde_json::from_str(&stored)
            .map_err(|_| BenchError::RunDirCollision(run_dir.clone()))?;
        if canonical_config(&stored) != canonical_config(cfg) {
            return Err(BenchError::RunDirCollision(run_dir.clone()));
        }
    }
    let predictions_dir = run_dir.join("predictions");
    fs::create_dir_all(&predictions_dir).map_err(|e| io_err(&predictions_dir, e))?;
    let config_json = serde_json::to_string_pretty(cfg)?;
    fs::write(&config_path, config_json + "\n").map_err(|e| io_err(&config_path, e))?;

    let canonical_seed = cfg.canonical_seed();
    let mut record = RunRecord {
        config: cfg.clone(),
        run_dir: run_dir.clone(),
        predictions: Vec::new(),
        evals: Vec::new(),
        stats: Vec::new(),
        timings: Vec::new(),
        failures: Vec::new(),
        project_runs: Vec::new(),
    };

    for run in &runs {
        let train_sps = run.train_story_points();
        let mut canonical_errors: Vec<(String, Vec<f64>)> = Vec::new();
        for &method in &cfg.methods {
            let seeds: &[u64] = if method.is_stochastic() {
                &cfg.seeds
            } else {
                std::slice::from_ref(&canonical_seed)
            };
            for &seed in seeds {
                let (preds, timing) = match run_method(run, method, seed, cfg) {
                    Ok(ok) => ok,
                    Err(message) => {
                        record.failures.push(FailureNote {
                            project: run.label.clone(),
                            method,
                            seed,
                            message,
                        });
                        continue;
                    }
                };
                let path = predictions_dir.join(prediction_file_name(&run.label, method, seed));
                write_prediction_csv(&path, &preds)?;
                record.predictions.push(PredictionArtifact {
                    project: run.label.clone(),
                    method,
                    seed,
                    path,
                });
                if let Some((seconds, epochs)) = timing {
                    record.timings.push(TimingRow {
                        project: run.label.clone(),
                        method,
                        seed,
                        seconds,
                        epochs,
                    });
                }
                match sa(&preds, &train_sps, cfg.sa_runs, seed) {
                    Ok(report) => {
                        record.evals.push(EvalRow {
                            project: run.label.clone(),
                            method,
                            seed,
                            report,
                        });
                        if seed == canonical_seed {
                            canonical_errors
                                .push((method.as_str().to_string(), preds.abs_errors()));
                        }
                    }
                    Err(e) => record.failures.push(FailureNote {
                        project: run.label.clone(),
                        method,
                        seed,
                        message: e.to_string(),
                    }),
                }
            }
        }
        if canonical_errors.len() >= 2 {
            let pairs = canonical_errors.len() * (canonical_errors.len() - 1) / 2;
            let results = compare_methods(
                &canonical_errors,
                &StatConfig {
                    k_hypotheses: pairs,
                    ..StatConfig::default()
                },
            )?;
            record.stats.extend(results.into_iter().map(|result| StatRow {
                project: run.label.clone(),
                result,
            }));
        }
    }
    record.project_runs = runs;

    for (name, content) in [
        ("eval.csv", eval_csv(&record.evals)),
        ("stats.csv", stats_csv(&record.stats)),
        ("timing.csv", timing_csv(&record.timings)),
    ] {
        let path = run_dir.join(name);
        fs::write(&path, content).map_err(|e| io_err(&path, e))?;
    }
    if !record.failures.is_empty() {
        let path = run_dir.join("failures.json");
        let body = serde_json::to_string_pretty(&record.failures)?;
        fs::write(&path, body + "\n").map_err(|e| io_err(&path, e))?;
    }
    let manifest_path = run_dir.join("manifest.json");
    let manifest = serde_json::to_string_pretty(&record)?;
    fs::write(&manifest_path, manifest + "\n").map_err(|e| io_err(&manifest_path, e))?;

    Ok(record)
}

/// Output format for rendered tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableStyle {
    Csv,
    Markdown,
}

impl TableStyle {
    fn extension(self) -> &'static str {
        match self {
            TableStyle::Csv => "csv",
            TableStyle::Markdown => "md",
        }
    }
}

/// p-values below 0.001 render as a bound, not a misleading zero.
pub fn p_display(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

/// Effect-size cell: the A12 value with its magnitude letter when the
/// comparison is significant and favours the first method, an underscore
/// otherwise (escaped in markdown).
pub fn a12_cell(result: &StatTestResult, style: TableStyle) -> String {
    let mark = if result.significant && result.a12 >= 0.5 {
        result.magnitude.letter()
    } else {
        match style {
            TableStyle::Csv => "_",
            TableStyle::Markdown => "\\_",
        }
    };
    format!("({:.2}) {}", result.a12, mark)
}

fn method_label(name: &str) -> String {
    Method::parse(name)
        .map(|m| m.label().to_string())
        .unwrap_or_else(|| name.to_string())
}

/// Renders per-project metric and comparison tables under
/// `run_dir/tables` and returns the written paths.
///
/// Metric tables list the canonical-seed MAE, MdAE, and SA per method;
/// comparison tables list the one-sided p-value and the A12 effect cell
/// for every method pair. Both styles print identical numbers.
pub fn emit_tables(record: &RunRecord, style: TableStyle) -> Result<Vec<PathBuf>, BenchError> {
    let dir = record.run_dir.join("tables");
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let canonical = record.config.canonical_seed();

    let mut projects: Vec<&str> = Vec::new();
    for row in &record.evals {
        if !projects.contains(&row.project.as_str()) {
            projects.push(&row.project);
        }
    }

    let mut written = Vec::new();
    for project in projects {
        let mut metric_rows = Vec::new();
        for &method in &record.config.methods {
            let found = record
                .evals
                .iter()
                .find(|e| e.project == project && e.method == method && e.seed == canonical);
            if let Some(row) = found {
                metric_rows.push(format_metric_row(method.label(), &row.report, style));
            }
        }
        let metrics_path = dir.join(format!("{}_metrics.{}", slug(project), style.extension()));
        let header = match style {
            TableStyle::Csv => "Method,MAE,MdAE,SA\n".to_string(),
            TableStyle::Markdown => "| Method | MAE | MdAE | SA |\n| --- | --- | --- | --- |\n".to_string(),
        };
        let body: String = metric_rows.concat();
        fs::write(&metrics_path, header + &body).map_err(|e| io_err(&metrics_path, e))?;
        written.push(metrics_path);

        let stat_rows: Vec<&StatRow> = record
            .stats
            .iter()
            .filter(|s| s.project == project)
            .collect();
        if stat_rows.is_empty() {
            continue;
        }
        let stats_path = dir.join(format!("{}_stats.{}", slug(project), style.extension()));
        let mut table = match style {
            TableStyle::Csv => "Comparison,p,A12\n".to_string(),
            TableStyle::Markdown => "| Comparison | p | A12 |\n| --- | --- | --- |\n".to_string(),
        };
        for row in stat_rows {
            let comparison = format!(
                "{} vs {}",
                method_label(&row.result.method_a),
                method_label(&row.result.method_b)
            );
            let p = p_display(row.result.p_value);
            let cell = a12_cell(&row.result, style);
            match style {
                TableStyle::Csv => table.push_str(&format!("{comparison},{p},{cell}\n")),
                TableStyle::Markdown => {
                    table.push_str(&format!("| {comparison} | {p} | {cell} |\n"))
                }
            }
        }
        fs::write(&stats_path, table).map_err(|e| io_err(&stats_path, e))?;
        written.push(stats_path);
    }
    Ok(written)
}

fn format_metric_row(label: &str, report: &EvalReport, style: TableStyle) -> String {
    match style {
        TableStyle::Csv => format!(
            "{label},{:.2},{:.2},{:.1}\n",
            report.mae, report.mdae, report.sa
        ),
        TableStyle::Markdown => format!(
            "| {label} | {:.2} | {:.2} | {:.1} |\n",
            report.mae, report.mdae, report.sa
        ),
    }
}

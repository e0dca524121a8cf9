//! Classification estimator: TF/IDF text features plus categorical
//! features, chi-squared feature selection, and a linear one-vs-rest SVM
//! over the story-point values seen in training.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{split_code_regions, Issue};
use crate::metrics::{MetricsError, PredictionEntry, PredictionSet};

/// Artifact layout revision; bump on any incompatible field change.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Training issue count below which the classifier logs a small-sample
/// warning.
pub const SMALL_TRAINING_FLOOR: usize = 200;

#[derive(Debug, Error)]
pub enum TfidfError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("feature count k must be at least 1")]
    BadK,
    #[error("assembled feature space is empty")]
    EmptyFeatureSpace,
    #[error("feature matrix and label vector disagree: {rows} rows, {labels} labels")]
    MismatchedRows { rows: usize, labels: usize },
    #[error("model artifact declares format {found}, expected {MODEL_FORMAT_VERSION}")]
    BadArtifactVersion { found: u32 },
    #[error("model artifact io: {0}")]
    Io(String),
    #[error("model artifact malformed: {0}")]
    Format(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Estimator hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfidfSvmConfig {
    /// Number of features kept by chi-squared selection.
    pub k: usize,
    /// SVM regularization constant.
    pub c: f64,
}

impl Default for TfidfSvmConfig {
    fn default() -> Self {
        Self { k: 100, c: 1.0 }
    }
}

/// Splits an issue into a prose chunk and a code chunk.
///
/// The prose chunk is the title followed by the description with code
/// markup regions removed; the code chunk is those regions concatenated in
/// order of appearance.
pub fn build_context(issue: &Issue) -> (String, String) {
    let split = split_code_regions(&issue.description);
    let text_chunk = format!("{} {}", issue.title, split.prose);
    (text_chunk, split.code)
}

/// Lowercases, splits on non-alphanumeric characters, and drops tokens
/// shorter than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().nth(1).is_some())
        .map(str::to_owned)
        .collect()
}

/// Fitted vocabulary, IDF weights, categorical maps, and the chi-squared
/// feature selection over the assembled vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    text_vocab: BTreeMap<String, usize>,
    code_vocab: BTreeMap<String, usize>,
    idf_text: Vec<f64>,
    idf_code: Vec<f64>,
    type_vocab: BTreeMap<String, usize>,
    component_vocab: BTreeMap<String, usize>,
    selected_indices: Vec<usize>,
    k_selected: usize,
}

impl FeaturePipeline {
    /// Width of the concatenated vector before selection.
    pub fn assembled_dim(&self) -> usize {
        self.text_vocab.len()
            + self.code_vocab.len()
            + self.type_vocab.len()
            + self.component_vocab.len()
    }

    /// Indices retained by selection, ascending.
    pub fn selected_indices(&self) -> &[usize] {
        &self.selected_indices
    }

    pub fn k_selected(&self) -> usize {
        self.k_selected
    }
}

fn build_vocab<'a>(docs: impl Iterator<Item = &'a Vec<String>>) -> BTreeMap<String, usize> {
    let mut terms: Vec<&String> = docs.flatten().collect();
    terms.sort();
    terms.dedup();
    terms
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect()
}

fn idf_weights(vocab: &BTreeMap<String, usize>, docs: &[Vec<String>]) -> Vec<f64> {
    let mut df = vec![0usize; vocab.len()];
    for doc in docs {
        let mut seen: Vec<&String> = doc.iter().collect();
        seen.sort();
        seen.dedup();
        for term in seen {
            if let Some(&i) = vocab.get(term) {
                df[i] += 1;
            }
        }
    }
    let n = docs.len() as f64;
    df.iter()
        .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
        .collect()
}

fn tfidf_block(
    tokens: &[String],
    vocab: &BTreeMap<String, usize>,
    idf: &[f64],
) -> Vec<f64> {
    let mut block = vec![0.0; vocab.len()];
    for token in tokens {
        if let Some(&i) = vocab.get(token) {
            block[i] += idf[i];
        }
    }
    let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut block {
            *v /= norm;
        }
    }
    block
}

fn assemble(pipeline: &FeaturePipeline, issue: &Issue) -> Vec<f64> {
    let (text, code) = build_context(issue);
    let mut vector = tfidf_block(&tokenize(&text), &pipeline.text_vocab, &pipeline.idf_text);
    vector.extend(tfidf_block(&tokenize(&code), &pipeline.code_vocab, &pipeline.idf_code));

    let mut type_block = vec![0.0; pipeline.type_vocab.len()];
    if let Some(&i) = pipeline.type_vocab.get(&issue.issue_type) {
        type_block[i] = 1.0;
    }
    vector.extend(type_block);

    let mut component_block = vec![0.0; pipeline.component_vocab.len()];
    for component in &issue.components {
        if let Some(&i) = pipeline.component_vocab.get(component) {
            component_block[i] = 1.0;
        }
    }
    vector.extend(component_block);
    vector
}

/// Chi-squared score of each non-negative feature against the class
/// labels: observed per-class feature mass versus the mass expected from
/// class frequencies alone. Features with zero total mass score 0.
pub fn chi2_scores(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let mut classes: Vec<f64> = y.to_vec();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    let class_of = |label: f64| classes.iter().position(|&c| c == label).unwrap();

    let dim = x.first().map_or(0, Vec::len);
    let n = x.len() as f64;
    let mut class_count = vec![0.0; classes.len()];
    let mut observed = vec![vec![0.0; dim]; classes.len()];
    for (row, &label) in x.iter().zip(y) {
        let c = class_of(label);
        class_count[c] += 1.0;
        for (f, &v) in row.iter().enumerate() {
            observed[c][f] += v;
        }
    }

    (0..dim)
        .map(|f| {
            let total: f64 = observed.iter().map(|o| o[f]).sum();
            if total == 0.0 {
                return 0.0;
            }
            classes
                .iter()
                .enumerate()
                .map(|(c, _)| {
                    let expected = total * class_count[c] / n;
                    let diff = observed[c][f] - expected;
                    diff * diff / expected
                })
                .sum()
        })
        .collect()
}

/// Fits vocabularies, IDF weights, categorical maps, and the top-k
/// chi-squared feature selection on the training issues.
///
/// Oversized k is clamped to the assembled dimension with a warning. The
/// selection is a projection: the top k' < k features under the same
/// training data are a subset of the top k.
pub fn fit_pipeline(train: &[Issue], k: usize) -> Result<FeaturePipeline, TfidfError> {
    if train.is_empty() {
        return Err(TfidfError::EmptyTraining);
    }
    if k == 0 {
        return Err(TfidfError::BadK);
    }

    let mut text_docs = Vec::with_capacity(train.len());
    let mut code_docs = Vec::with_capacity(train.len());
    for issue in train {
        let (text, code) = build_context(issue);
        text_docs.push(tokenize(&text));
        code_docs.push(tokenize(&code));
    }

    let text_vocab = build_vocab(text_docs.iter());
    let code_vocab = build_vocab(code_docs.iter());
    let idf_text = idf_weights(&text_vocab, &text_docs);
    let idf_code = idf_weights(&code_vocab, &code_docs);

    let mut types: Vec<&String> = train.iter().map(|i| &i.issue_type).collect();
    types.sort();
    types.dedup();
    let type_vocab: BTreeMap<String, usize> =
        types.into_iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();

    let mut components: Vec<&String> = train.iter().flat_map(|i| &i.components).collect();
    components.sort();
    components.dedup();
    let component_vocab: BTreeMap<String, usize> =
        components.into_iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();

    let mut pipeline = FeaturePipeline {
        text_vocab,
        code_vocab,
        idf_text,
        idf_code,
        type_vocab,
        component_vocab,
        selected_indices: Vec::new(),
        k_selected: 0,
    };
    let dim = pipeline.assembled_dim();
    if dim == 0 {
        return Err(TfidfError::EmptyFeatureSpace);
    }
    let k_selected = if k > dim {
        log::warn!("feature count k={k} exceeds assembled dimension {dim}; clamping");
        dim
    } else {
        k
    };

    let matrix: Vec<Vec<f64>> = train.iter().map(|i| assemble(&pipeline, i)).collect();
    let labels: Vec<f64> = train.iter().map(|i| i.story_point).collect();
    let scores = chi2_scores(&matrix, &labels);

    let mut ranked: Vec<usize> = (0..dim).collect();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut selected: Vec<usize> = ranked[..k_selected].to_vec();
    selected.sort_unstable();

    pipeline.selected_indices = selected;
    pipeline.k_selected = k_selected;
    Ok(pipeline)
}

/// Maps an issue to its selected feature vector. Unseen terms and
/// categories contribute zeros.
pub fn transform(pipeline: &FeaturePipeline, issue: &Issue) -> Vec<f64> {
    let full = assemble(pipeline, issue);
    pipeline.selected_indices.iter().map(|&i| full[i]).collect()
}

/// One-vs-rest linear SVM over story-point classes. `weights[c]` has one
/// trailing bias coordinate; empty when only one class was seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SPClassifier {
    class_labels: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

impl SPClassifier {
    /// Distinct training story-point values, ascending. Predictions are
    /// always drawn from this list.
    pub fn class_labels(&self) -> &[f64] {
        &self.class_labels
    }

    /// Per-class hyperplane score of a selected feature vector.
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| {
                let dot: f64 = w[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum();
                dot + w[x.len()]
            })
            .collect()
    }

    /// Winning class label; ties go to the lowest label.
    pub fn classify(&self, x: &[f64]) -> f64 {
        if self.weights.is_empty() {
            return self.class_labels[0];
        }
        let scores = self.scores(x);
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        self.class_labels[best]
    }
}

/// Hinge-loss dual coordinate descent for one binary subproblem.
/// Deterministic: coordinates are visited in index order every pass.
fn train_binary(x: &[Vec<f64>], y: &[f64], c: f64) -> Vec<f64> {
    let dim = x[0].len() + 1;
    let q_diag: Vec<f64> = x
        .iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .collect();
    let mut alpha = vec![0.0; x.len()];
    let mut w = vec![0.0; dim];

    for _ in 0..1000 {
        let mut max_violation = 0.0f64;
        for i in 0..x.len() {
            let margin: f64 =
                w[..dim - 1].iter().zip(&x[i]).map(|(a, b)| a * b).sum::<f64>() + w[dim - 1];
            let g = y[i] * margin - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / q_diag[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * y[i];
                if step != 0.0 {
                    for (wj, xj) in w[..dim - 1].iter_mut().zip(&x[i]) {
                        *wj += step * xj;
                    }
                    w[dim - 1] += step;
                }
            }
        }
        if max_violation < 1e-6 {
            break;
        }
    }
    w
}

/// Trains a one-vs-rest linear SVM. A single-class input yields a constant
/// predictor with a warning; sets smaller than [`SMALL_TRAINING_FLOOR`]
/// also warn.
pub fn train_svm(x: &[Vec<f64>], y: &[f64], c: f64) -> Result<SPClassifier, TfidfError> {
    if x.is_empty() {
        return Err(TfidfError::EmptyTraining);
    }
    if x.len() != y.len() {
        return Err(TfidfError::MismatchedRows { rows: x.len(), labels: y.len() });
    }
    if x.len() < SMALL_TRAINING_FLOOR {
        log::warn!(
            "training on {} issues; reliable classification needs more than {}",
            x.len(),
            SMALL_TRAINING_FLOOR
        );
    }

    let mut class_labels: Vec<f64> = y.to_vec();
    class_labels.sort_by(f64::total_cmp);
    class_labels.dedup();
    if class_labels.len() == 1 {
        log::warn!(
            "single story-point class {} in training; classifier is constant",
            class_labels[0]
        );
        return Ok(SPClassifier { class_labels, weights: Vec::new() });
    }

    let weights = class_labels
        .iter()
        .map(|&label| {
            let signs: Vec<f64> =
                y.iter().map(|&v| if v == label { 1.0 } else { -1.0 }).collect();
            train_binary(x, &signs, c)
        })
        .collect();
    Ok(SPClassifier { class_labels, weights })
}

/// Classifies each test issue and pairs the winning class label with the
/// actual story point.
pub fn predict_svm(
    clf: &SPClassifier,
    pipeline: &FeaturePipeline,
    test: &[Issue],
) -> Result<PredictionSet, TfidfError> {
    let entries = test
        .iter()
        .map(|issue| PredictionEntry {
            issue_key: issue.issue_key.clone(),
            actual: issue.story_point,
            predicted: clf.classify(&transform(pipeline, issue)),
        })
        .collect();
    Ok(PredictionSet::new(entries)?)
}

/// A fitted pipeline and classifier bundled for storage and batch use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfSvmModel {
    format_version: u32,
    pub pipeline: FeaturePipeline,
    pub classifier: SPClassifier,
}

impl TfidfSvmModel {
    pub fn fit(train: &[Issue], cfg: &TfidfSvmConfig) -> Result<Self, TfidfError> {
        let pipeline = fit_pipeline(train, cfg.k)?;
        let matrix: Vec<Vec<f64>> = train.iter().map(|i| transform(&pipeline, i)).collect();
        let labels: Vec<f64> = train.iter().map(|i| i.story_point).collect();
        let classifier = train_svm(&matrix, &labels, cfg.c)?;
        Ok(Self { format_version: MODEL_FORMAT_VERSION, pipeline, classifier })
    }

    pub fn predict(&self, test: &[Issue]) -> Result<PredictionSet, TfidfError> {
        predict_svm(&self.classifier, &self.pipeline, test)
    }

    pub fn save(&self, path: &Path) -> Result<(), TfidfError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| TfidfError::Format(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| TfidfError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TfidfError> {
        let json = std::fs::read_to_string(path).map_err(|e| TfidfError::Io(e.to_string()))?;
        let model: Self =
            serde_json::from_str(&json).map_err(|e| TfidfError::Format(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(TfidfError::BadArtifactVersion { found: model.format_version });
        }
        Ok(model)
    }
}

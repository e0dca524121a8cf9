//! Sequence regression estimator: word embeddings feed an LSTM document
//! encoder, a recurrent highway network refines the pooled document
//! vector, and a linear head regresses the story point. Supports optional
//! next-token pre-training of the embedding and LSTM weights and
//! early-stopped supervised training.
//!
//! All arithmetic is plain f64 in a fixed order, so a given (data, config,
//! seed) triple reproduces bit-identical traces and predictions.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Issue, IssueDataset, SplitPlan};
use crate::metrics::{MetricsError, PredictionEntry, PredictionSet};
use crate::rng;

/// Checkpoint layout revision; bump on any incompatible change.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Reserved token index for right-padding.
pub const PAD_INDEX: usize = 0;
/// Reserved token index for out-of-vocabulary words.
pub const OOV_INDEX: usize = 1;

const SALT_INIT: u64 = 1;
const SALT_SHUFFLE: u64 = 2;
const SALT_LM: u64 = 3;
const SALT_GRAD: u64 = 4;

#[derive(Debug, Error)]
pub enum DeepSEError {
    #[error("training issues are empty")]
    EmptyTraining,
    #[error("validation issues are empty")]
    EmptyValidation,
    #[error("split index {index} out of range for dataset of {len} issues")]
    BadSplitIndex { index: usize, len: usize },
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error(
        "non-finite loss at epoch {epoch}; training diverged, try lowering learning_rate"
    )]
    NonFiniteLoss { epoch: usize },
    #[error("checkpoint declares format {found}, expected {CHECKPOINT_FORMAT_VERSION}")]
    BadArtifactVersion { found: u32 },
    #[error("checkpoint io: {0}")]
    Io(String),
    #[error("checkpoint malformed: {0}")]
    Format(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepSEConfig {
    pub embed_dim: usize,
    pub lstm_dim: usize,
    pub rhwn_layers: usize,
    /// Times the highway stack is applied to the document vector.
    pub rhwn_steps: usize,
    /// Tokens read from the start of each issue context.
    pub max_tokens: usize,
    /// Vocabulary budget including the padding and OOV slots.
    pub vocab_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Initialize embedding and LSTM weights from a next-token language
    /// model trained on the same split.
    pub pretrain: bool,
}

impl Default for DeepSEConfig {
    fn default() -> Self {
        Self {
            embed_dim: 50,
            lstm_dim: 100,
            rhwn_layers: 2,
            rhwn_steps: 10,
            max_tokens: 100,
            vocab_size: 1000,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            pretrain: false,
        }
    }
}

impl DeepSEConfig {
    pub fn validate(&self) -> Result<(), DeepSEError> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("lstm_dim", self.lstm_dim),
            ("rhwn_layers", self.rhwn_layers),
            ("rhwn_steps", self.rhwn_steps),
            ("max_tokens", self.max_tokens),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(DeepSEError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.vocab_size < 3 {
            return Err(DeepSEError::BadConfig(
                "vocab_size must leave room beyond padding and OOV".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(DeepSEError::BadConfig(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Splits on whitespace and punctuation, lowercased; single-character
/// tokens are kept. No stop-word removal and no code stripping.
fn split_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Frequency-ranked token table. Index 0 is padding, index 1 is
/// out-of-vocabulary; real tokens occupy [2, len).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    index: std::collections::BTreeMap<String, usize>,
    pub max_size: usize,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.index.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token_index(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV_INDEX)
    }
}

/// Ranks training tokens by frequency (ties alphabetically) and keeps the
/// top `max_size - 2`, reserving the padding and OOV slots.
pub fn build_vocab(train: &[Issue], max_size: usize) -> Vocab {
    let mut counts: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for issue in train {
        for token in split_tokens(&issue.context()) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(max_size.saturating_sub(2));
    let index = ranked
        .into_iter()
        .enumerate()
        .map(|(i, (token, _))| (token, i + 2))
        .collect();
    Vocab { index, max_size }
}

/// Maps the first `max_tokens` context tokens to indices, right-padded
/// with [`PAD_INDEX`].
pub fn encode(issue: &Issue, vocab: &Vocab, max_tokens: usize) -> Vec<usize> {
    let mut seq: Vec<usize> = split_tokens(&issue.context())
        .iter()
        .take(max_tokens)
        .map(|t| vocab.token_index(t))
        .collect();
    seq.resize(max_tokens, PAD_INDEX);
    seq
}

// Gate order within the LSTM parameter block: input, forget, cell, output.
const GATES: usize = 4;
const GATE_I: usize = 0;
const GATE_F: usize = 1;
const GATE_G: usize = 2;
const GATE_O: usize = 3;

/// Offsets of each parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    v: usize,
    e: usize,
    h: usize,
    layers: usize,
}

impl Layout {
    fn new(vocab_len: usize, cfg: &DeepSEConfig) -> Self {
        Self { v: vocab_len, e: cfg.embed_dim, h: cfg.lstm_dim, layers: cfg.rhwn_layers }
    }

    fn emb_row(&self, token: usize) -> std::ops::Range<usize> {
        token * self.e..(token + 1) * self.e
    }

    fn lstm_base(&self) -> usize {
        self.v * self.e
    }

    fn wx(&self, gate: usize) -> std::ops::Range<usize> {
        let start = self.lstm_base() + gate * self.h * self.e;
        start..start + self.h * self.e
    }

    fn wh(&self, gate: usize) -> std::ops::Range<usize> {
        let start = self.lstm_base() + GATES * self.h * self.e + gate * self.h * self.h;
        start..start + self.h * self.h
    }

    fn bias(&self, gate: usize) -> std::ops::Range<usize> {
        let start =
            self.lstm_base() + GATES * self.h * (self.e + self.h) + gate * self.h;
        start..start + self.h
    }

    /// Length of the embedding + LSTM prefix shared with the language
    /// model.
    fn encoder_len(&self) -> usize {
        self.lstm_base() + GATES * self.h * (self.e + self.h) + GATES * self.h
    }

    fn rhwn_layer_len(&self) -> usize {
        2 * self.h * self.h + 2 * self.h
    }

    fn rhwn_wt(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.encoder_len() + layer * self.rhwn_layer_len();
        start..start + self.h * self.h
    }

    fn rhwn_bt(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.rhwn_wt(layer).end;
        start..start + self.h
    }

    fn rhwn_wh(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.rhwn_bt(layer).end;
        start..start + self.h * self.h
    }

    fn rhwn_bh(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.rhwn_wh(layer).end;
        start..start + self.h
    }

    fn reg_w(&self) -> std::ops::Range<usize> {
        let start = self.encoder_len() + self.layers * self.rhwn_layer_len();
        start..start + self.h
    }

    fn reg_b(&self) -> usize {
        self.reg_w().end
    }

    fn total(&self) -> usize {
        self.reg_b() + 1
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Glorot-uniform fill for one matrix region.
fn glorot_fill(slice: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in slice {
        *w = (rng.gen::<f64>() * 2.0 - 1.0) * r;
    }
}

/// Seeded parameter initialization. Forget-gate biases start at 1 and
/// highway transform biases at -1, biasing early training toward carrying
/// state through.
fn init_params(layout: &Layout, seed: u64) -> Vec<f64> {
    let mut params = vec![0.0; layout.total()];
    let mut rng = rng::stream(rng::combine(seed, SALT_INIT));
    for w in &mut params[..layout.lstm_base()] {
        *w = (rng.gen::<f64>() * 2.0 - 1.0) * 0.05;
    }
    for gate in 0..GATES {
        glorot_fill(&mut params[layout.wx(gate)], layout.e, layout.h, &mut rng);
        glorot_fill(&mut params[layout.wh(gate)], layout.h, layout.h, &mut rng);
    }
    params[layout.bias(GATE_F)].fill(1.0);
    for layer in 0..layout.layers {
        glorot_fill(&mut params[layout.rhwn_wt(layer)], layout.h, layout.h, &mut rng);
        glorot_fill(&mut params[layout.rhwn_wh(layer)], layout.h, layout.h, &mut rng);
        params[layout.rhwn_bt(layer)].fill(-1.0);
    }
    glorot_fill(&mut params[layout.reg_w()], layout.h, 1, &mut rng);
    params
}

/// Everything the backward pass needs from one LSTM step over a real
/// (non-padding) token.
struct LstmStep {
    tok: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Runs the LSTM over the non-padding prefix of `seq`. Padding steps are
/// skipped entirely, which makes trailing padding a no-op by construction.
fn lstm_run(params: &[f64], layout: &Layout, seq: &[usize]) -> Vec<LstmStep> {
    let h_dim = layout.h;
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    let mut steps = Vec::new();
    for &tok in seq {
        if tok == PAD_INDEX {
            continue;
        }
        let x = &params[layout.emb_row(tok)];
        let mut pre = [
            params[layout.bias(GATE_I)].to_vec(),
            params[layout.bias(GATE_F)].to_vec(),
            params[layout.bias(GATE_G)].to_vec(),
            params[layout.bias(GATE_O)].to_vec(),
        ];
        for (gate, pre_gate) in pre.iter_mut().enumerate() {
            let wx = &params[layout.wx(gate)];
            let wh = &params[layout.wh(gate)];
            for r in 0..h_dim {
                let mut acc = 0.0;
                for (col, &xc) in x.iter().enumerate() {
                    acc += wx[r * layout.e + col] * xc;
                }
                for (col, &hc) in h.iter().enumerate() {
                    acc += wh[r * h_dim + col] * hc;
                }
                pre_gate[r] += acc;
            }
        }
        let i: Vec<f64> = pre[GATE_I].iter().map(|&a| sigmoid(a)).collect();
        let f: Vec<f64> = pre[GATE_F].iter().map(|&a| sigmoid(a)).collect();
        let g: Vec<f64> = pre[GATE_G].iter().map(|&a| a.tanh()).collect();
        let o: Vec<f64> = pre[GATE_O].iter().map(|&a| sigmoid(a)).collect();
        let c_new: Vec<f64> =
            (0..h_dim).map(|r| f[r] * c[r] + i[r] * g[r]).collect();
        let tanh_c: Vec<f64> = c_new.iter().map(|&v| v.tanh()).collect();
        let h_new: Vec<f64> = (0..h_dim).map(|r| o[r] * tanh_c[r]).collect();
        steps.push(LstmStep {
            tok,
            h_prev: h,
            c_prev: c,
            i,
            f,
            g,
            o,
            tanh_c,
            h: h_new.clone(),
        });
        h = h_new;
        c = c_new;
    }
    steps
}

/// Backpropagates through the recorded LSTM steps. `dh_extra[k]` is the
/// externally injected gradient on step k's hidden state; embedding and
/// gate gradients accumulate into `grads`.
fn lstm_backprop(
    params: &[f64],
    layout: &Layout,
    steps: &[LstmStep],
    dh_extra: &[Vec<f64>],
    grads: &mut [f64],
) {
    let h_dim = layout.h;
    let mut dh_next = vec![0.0; h_dim];
    let mut dc_next = vec![0.0; h_dim];
    for (k, step) in steps.iter().enumerate().rev() {
        let mut da = [
            vec![0.0; h_dim],
            vec![0.0; h_dim],
            vec![0.0; h_dim],
            vec![0.0; h_dim],
        ];
        let mut dc_prev = vec![0.0; h_dim];
        for r in 0..h_dim {
            let dh = dh_extra[k][r] + dh_next[r];
            let dc = dc_next[r] + dh * step.o[r] * (1.0 - step.tanh_c[r] * step.tanh_c[r]);
            let d_o = dh * step.tanh_c[r];
            da[GATE_I][r] = dc * step.g[r] * step.i[r] * (1.0 - step.i[r]);
            da[GATE_F][r] = dc * step.c_prev[r] * step.f[r] * (1.0 - step.f[r]);
            da[GATE_G][r] = dc * step.i[r] * (1.0 - step.g[r] * step.g[r]);
            da[GATE_O][r] = d_o * step.o[r] * (1.0 - step.o[r]);
            dc_prev[r] = dc * step.f[r];
        }

        let x_range = layout.emb_row(step.tok);
        let mut dx = vec![0.0; layout.e];
        let mut dh_prev = vec![0.0; h_dim];
        for (gate, da_gate) in da.iter().enumerate() {
            let wx_range = layout.wx(gate);
            let wh_range = layout.wh(gate);
            let b_range = layout.bias(gate);
            for r in 0..h_dim {
                let a = da_gate[r];
                if a == 0.0 {
                    continue;
                }
                for col in 0..layout.e {
                    grads[wx_range.start + r * layout.e + col] +=
                        a * params[x_range.start + col];
                    dx[col] += params[wx_range.start + r * layout.e + col] * a;
                }
                for col in 0..h_dim {
                    grads[wh_range.start + r * h_dim + col] += a * step.h_prev[col];
                    dh_prev[col] += params[wh_range.start + r * h_dim + col] * a;
                }
                grads[b_range.start + r] += a;
            }
        }
        for (col, &d) in dx.iter().enumerate() {
            grads[x_range.start + col] += d;
        }
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
}

/// One highway layer application recorded for the backward pass.
struct RhwnStep {
    layer: usize,
    input: Vec<f64>,
    t: Vec<f64>,
    cand: Vec<f64>,
}

/// Applies the highway stack `rhwn_steps` times: each layer blends a tanh
/// candidate with its input under a sigmoid transform gate.
fn rhwn_run(
    params: &[f64],
    layout: &Layout,
    steps: usize,
    doc: &[f64],
) -> (Vec<RhwnStep>, Vec<f64>) {
    let h_dim = layout.h;
    let mut z = doc.to_vec();
    let mut trace = Vec::with_capacity(steps * layout.layers);
    for _ in 0..steps {
        for layer in 0..layout.layers {
            let wt = &params[layout.rhwn_wt(layer)];
            let bt = &params[layout.rhwn_bt(layer)];
            let wh = &params[layout.rhwn_wh(layer)];
            let bh = &params[layout.rhwn_bh(layer)];
            let mut t = vec![0.0; h_dim];
            let mut cand = vec![0.0; h_dim];
            for r in 0..h_dim {
                let mut at = bt[r];
                let mut ah = bh[r];
                for (col, &zc) in z.iter().enumerate() {
                    at += wt[r * h_dim + col] * zc;
                    ah += wh[r * h_dim + col] * zc;
                }
                t[r] = sigmoid(at);
                cand[r] = ah.tanh();
            }
            let out: Vec<f64> =
                (0..h_dim).map(|r| t[r] * cand[r] + (1.0 - t[r]) * z[r]).collect();
            trace.push(RhwnStep { layer, input: z, t, cand });
            z = out;
        }
    }
    (trace, z)
}

/// Backpropagates through the recorded highway applications and returns
/// the gradient on the document vector.
fn rhwn_backprop(
    params: &[f64],
    layout: &Layout,
    trace: &[RhwnStep],
    dz_out: &[f64],
    grads: &mut [f64],
) -> Vec<f64> {
    let h_dim = layout.h;
    let mut dz = dz_out.to_vec();
    for step in trace.iter().rev() {
        let wt_range = layout.rhwn_wt(step.layer);
        let bt_range = layout.rhwn_bt(step.layer);
        let wh_range = layout.rhwn_wh(step.layer);
        let bh_range = layout.rhwn_bh(step.layer);
        let mut dinput = vec![0.0; h_dim];
        for r in 0..h_dim {
            let da_t =
                dz[r] * (step.cand[r] - step.input[r]) * step.t[r] * (1.0 - step.t[r]);
            let da_c = dz[r] * step.t[r] * (1.0 - step.cand[r] * step.cand[r]);
            dinput[r] += dz[r] * (1.0 - step.t[r]);
            grads[bt_range.start + r] += da_t;
            grads[bh_range.start + r] += da_c;
            for col in 0..h_dim {
                grads[wt_range.start + r * h_dim + col] += da_t * step.input[col];
                grads[wh_range.start + r * h_dim + col] += da_c * step.input[col];
                dinput[col] += params[wt_range.start + r * h_dim + col] * da_t
                    + params[wh_range.start + r * h_dim + col] * da_c;
            }
        }
        dz = dinput;
    }
    dz
}

struct DocForward {
    lstm: Vec<LstmStep>,
    rhwn: Vec<RhwnStep>,
    z: Vec<f64>,
    pred: f64,
}

/// Full forward pass for one encoded issue; the document vector is the
/// mean hidden state over real tokens, or zeros for an all-padding
/// sequence.
fn forward_doc(params: &[f64], layout: &Layout, rhwn_steps: usize, seq: &[usize]) -> DocForward {
    let lstm = lstm_run(params, layout, seq);
    let mut doc = vec![0.0; layout.h];
    if !lstm.is_empty() {
        for step in &lstm {
            for (d, &v) in doc.iter_mut().zip(&step.h) {
                *d += v;
            }
        }
        let n = lstm.len() as f64;
        for d in &mut doc {
            *d /= n;
        }
    }
    let (rhwn, z) = rhwn_run(params, layout, rhwn_steps, &doc);
    let w = &params[layout.reg_w()];
    let pred = z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + params[layout.reg_b()];
    DocForward { lstm, rhwn, z, pred }
}

/// Backward pass for one document given the loss gradient on its raw
/// prediction.
fn backward_doc(
    params: &[f64],
    layout: &Layout,
    fwd: &DocForward,
    dpred: f64,
    grads: &mut [f64],
) {
    let w_range = layout.reg_w();
    let mut dz = vec![0.0; layout.h];
    for (r, (&zv, d)) in fwd.z.iter().zip(dz.iter_mut()).enumerate() {
        grads[w_range.start + r] += dpred * zv;
        *d = dpred * params[w_range.start + r];
    }
    grads[layout.reg_b()] += dpred;

    let ddoc = rhwn_backprop(params, layout, &fwd.rhwn, &dz, grads);
    if fwd.lstm.is_empty() {
        return;
    }
    let scale = 1.0 / fwd.lstm.len() as f64;
    let per_step: Vec<f64> = ddoc.iter().map(|&d| d * scale).collect();
    let dh_extra = vec![per_step; fwd.lstm.len()];
    lstm_backprop(params, layout, &fwd.lstm, &dh_extra, grads);
}

/// Adam with bias correction; one state per trained vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

/// A trained model: config, vocabulary, the parameters captured at the
/// best validation epoch, and the full training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub cfg: DeepSEConfig,
    vocab: Vocab,
    params: Vec<f64>,
    pub trace: Vec<EpochStats>,
    /// Zero-based index into `trace` of the minimal validation loss.
    pub best_epoch: usize,
}

impl TrainedModel {
    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Raw regressor output for one issue, before the non-negativity
    /// clamp.
    pub fn raw_prediction(&self, issue: &Issue) -> f64 {
        let layout = Layout::new(self.vocab.len(), &self.cfg);
        let seq = encode(issue, &self.vocab, self.cfg.max_tokens);
        forward_doc(&self.params, &layout, self.cfg.rhwn_steps, &seq).pred
    }

    /// Serializes a version-prefixed binary checkpoint.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), DeepSEError> {
        let payload =
            bincode::serialize(self).map_err(|e| DeepSEError::Format(e.to_string()))?;
        let mut bytes = CHECKPOINT_FORMAT_VERSION.to_le_bytes().to_vec();
        bytes.extend(payload);
        std::fs::write(path, bytes).map_err(|e| DeepSEError::Io(e.to_string()))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, DeepSEError> {
        let bytes = std::fs::read(path).map_err(|e| DeepSEError::Io(e.to_string()))?;
        if bytes.len() < 4 {
            return Err(DeepSEError::Format("checkpoint shorter than its header".into()));
        }
        let found = u32::from_le_bytes(bytes[..4].try_into().unwrap());
        if found != CHECKPOINT_FORMAT_VERSION {
            return Err(DeepSEError::BadArtifactVersion { found });
        }
        bincode::deserialize(&bytes[4..]).map_err(|e| DeepSEError::Format(e.to_string()))
    }

    /// Writes the trace as CSV with columns epoch, train_loss, val_loss,
    /// seconds.
    pub fn export_trace_csv(&self, path: &Path) -> Result<(), DeepSEError> {
        let mut writer =
            csv::Writer::from_path(path).map_err(|e| DeepSEError::Io(e.to_string()))?;
        writer
            .write_record(["epoch", "train_loss", "val_loss", "seconds"])
            .map_err(|e| DeepSEError::Io(e.to_string()))?;
        for (epoch, stats) in self.trace.iter().enumerate() {
            writer
                .write_record([
                    epoch.to_string(),
                    format!("{}", stats.train_loss),
                    format!("{}", stats.val_loss),
                    format!("{}", stats.seconds),
                ])
                .map_err(|e| DeepSEError::Io(e.to_string()))?;
        }
        writer.flush().map_err(|e| DeepSEError::Io(e.to_string()))
    }
}

fn mean_abs_loss(
    params: &[f64],
    layout: &Layout,
    rhwn_steps: usize,
    seqs: &[Vec<usize>],
    targets: &[f64],
) -> f64 {
    let total: f64 = seqs
        .iter()
        .zip(targets)
        .map(|(seq, &y)| (forward_doc(params, layout, rhwn_steps, seq).pred - y).abs())
        .sum();
    total / seqs.len() as f64
}

fn gather<'a>(
    data: &'a IssueDataset,
    indices: &[usize],
) -> Result<Vec<&'a Issue>, DeepSEError> {
    indices
        .iter()
        .map(|&i| {
            data.issues()
                .get(i)
                .ok_or(DeepSEError::BadSplitIndex { index: i, len: data.len() })
        })
        .collect()
}

/// Trains the regressor on the plan's training issues, early-stopping on
/// its validation issues.
///
/// `data` is the dataset the plan's train/validation indices refer to (the
/// source dataset for cross-project plans). Stops after `patience`
/// consecutive epochs without strict validation improvement, or at
/// `max_epochs`; the returned parameters are the best-epoch snapshot.
pub fn train(
    split: &SplitPlan,
    data: &IssueDataset,
    cfg: &DeepSEConfig,
) -> Result<TrainedModel, DeepSEError> {
    cfg.validate()?;
    let train_issues = gather(data, &split.train)?;
    let val_issues = gather(data, &split.validation)?;
    if train_issues.is_empty() {
        return Err(DeepSEError::EmptyTraining);
    }
    if val_issues.is_empty() {
        return Err(DeepSEError::EmptyValidation);
    }

    let owned_train: Vec<Issue> = train_issues.iter().map(|&i| i.clone()).collect();
    let vocab = build_vocab(&owned_train, cfg.vocab_size);
    let layout = Layout::new(vocab.len(), cfg);
    let mut params = init_params(&layout, cfg.seed);
    if cfg.pretrain {
        let lm = pretrain_lm(&owned_train, &vocab, cfg)?;
        params[..layout.encoder_len()].copy_from_slice(lm.encoder());
    }

    let train_seqs: Vec<Vec<usize>> =
        train_issues.iter().map(|i| encode(i, &vocab, cfg.max_tokens)).collect();
    let train_y: Vec<f64> = train_issues.iter().map(|i| i.story_point).collect();
    let val_seqs: Vec<Vec<usize>> =
        val_issues.iter().map(|i| encode(i, &vocab, cfg.max_tokens)).collect();
    let val_y: Vec<f64> = val_issues.iter().map(|i| i.story_point).collect();

    let mut adam = Adam::new(layout.total());
    let mut grads = vec![0.0; layout.total()];
    let mut trace = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = params.clone();
    let mut stale_epochs = 0;

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_seqs.len()).collect();
        let mut shuffle_rng =
            rng::stream(rng::combine(rng::combine(cfg.seed, SALT_SHUFFLE), epoch as u64));
        order.shuffle(&mut shuffle_rng);

        for batch in order.chunks(cfg.batch_size) {
            grads.fill(0.0);
            let weight = 1.0 / batch.len() as f64;
            for &idx in batch {
                let fwd = forward_doc(&params, &layout, cfg.rhwn_steps, &train_seqs[idx]);
                let residual = fwd.pred - train_y[idx];
                let dpred = if residual > 0.0 {
                    weight
                } else if residual < 0.0 {
                    -weight
                } else {
                    0.0
                };
                backward_doc(&params, &layout, &fwd, dpred, &mut grads);
            }
            adam.step(&mut params, &grads, cfg.learning_rate);
        }

        let train_loss = mean_abs_loss(&params, &layout, cfg.rhwn_steps, &train_seqs, &train_y);
        let val_loss = mean_abs_loss(&params, &layout, cfg.rhwn_steps, &val_seqs, &val_y);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(DeepSEError::NonFiniteLoss { epoch });
        }
        trace.push(EpochStats {
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params.copy_from_slice(&params);
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs == cfg.patience {
                break;
            }
        }
    }

    Ok(TrainedModel { cfg: *cfg, vocab, params: best_params, trace, best_epoch })
}

/// Predicts each test issue with the raw regressor output clamped below
/// at 0; values are never rounded to the planning-poker scale.
pub fn predict_deepse(
    model: &TrainedModel,
    test: &[Issue],
) -> Result<PredictionSet, DeepSEError> {
    let entries = test
        .iter()
        .map(|issue| PredictionEntry {
            issue_key: issue.issue_key.clone(),
            actual: issue.story_point,
            predicted: model.raw_prediction(issue).max(0.0),
        })
        .collect();
    Ok(PredictionSet::new(entries)?)
}

/// Next-token language model sharing the embedding + LSTM prefix with the
/// supervised model; used to warm-start training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmModel {
    encoder_len: usize,
    params: Vec<f64>,
    head: Vec<f64>,
    /// Per-epoch mean cross-entropy over the corpus.
    pub losses: Vec<f64>,
}

impl LmModel {
    /// Embedding + LSTM weights for initializing the supervised model.
    pub fn encoder(&self) -> &[f64] {
        &self.params[..self.encoder_len]
    }
}

/// Softmax cross-entropy over the vocabulary; returns the loss and leaves
/// `dlogits` holding p - onehot(target).
fn softmax_ce(logits: &[f64], target: usize, dlogits: &mut [f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (d, &l) in dlogits.iter_mut().zip(logits) {
        *d = (l - max).exp();
        sum += *d;
    }
    for d in dlogits.iter_mut() {
        *d /= sum;
    }
    let loss = -(dlogits[target].max(f64::MIN_POSITIVE)).ln();
    dlogits[target] -= 1.0;
    loss
}

fn lm_logits(params: &[f64], head: &[f64], layout: &Layout, h: &[f64]) -> Vec<f64> {
    let _ = params;
    let v = layout.v;
    let h_dim = layout.h;
    (0..v)
        .map(|vi| {
            let mut acc = head[v * h_dim + vi];
            for (col, &hc) in h.iter().enumerate() {
                acc += head[vi * h_dim + col] * hc;
            }
            acc
        })
        .collect()
}

fn lm_epoch_loss(
    params: &[f64],
    head: &[f64],
    layout: &Layout,
    seqs: &[Vec<usize>],
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut scratch = vec![0.0; layout.v];
    for seq in seqs {
        let steps = lstm_run(params, layout, seq);
        for k in 0..steps.len().saturating_sub(1) {
            let logits = lm_logits(params, head, layout, &steps[k].h);
            total += softmax_ce(&logits, steps[k + 1].tok, &mut scratch);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Trains a next-token language model on the corpus and returns weights
/// for initializing the supervised model.
///
/// Runs for `cfg.max_epochs` or until the mean cross-entropy stops
/// improving for `cfg.patience` consecutive epochs. Documents with fewer
/// than two real tokens contribute no prediction targets.
pub fn pretrain_lm(
    corpus: &[Issue],
    vocab: &Vocab,
    cfg: &DeepSEConfig,
) -> Result<LmModel, DeepSEError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(DeepSEError::EmptyTraining);
    }
    let layout = Layout::new(vocab.len(), cfg);
    let mut params = init_params(&layout, rng::combine(cfg.seed, SALT_LM));
    let head_len = layout.v * layout.h + layout.v;
    let mut head = vec![0.0; head_len];
    {
        let mut rng = rng::stream(rng::combine(rng::combine(cfg.seed, SALT_LM), 1));
        glorot_fill(&mut head[..layout.v * layout.h], layout.h, layout.v, &mut rng);
    }

    let seqs: Vec<Vec<usize>> =
        corpus.iter().map(|i| encode(i, vocab, cfg.max_tokens)).collect();
    let total_targets: usize = seqs
        .iter()
        .map(|s| s.iter().filter(|&&t| t != PAD_INDEX).count().saturating_sub(1))
        .sum();
    if total_targets == 0 {
        return Ok(LmModel {
            encoder_len: layout.encoder_len(),
            params,
            head,
            losses: Vec::new(),
        });
    }

    let mut adam_params = Adam::new(layout.total());
    let mut adam_head = Adam::new(head_len);
    let mut grads = vec![0.0; layout.total()];
    let mut head_grads = vec![0.0; head_len];
    let mut losses: Vec<f64> = Vec::new();
    let mut stale_epochs = 0;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        let mut shuffle_rng = rng::stream(rng::combine(
            rng::combine(cfg.seed, rng::combine(SALT_LM, SALT_SHUFFLE)),
            epoch as u64,
        ));
        order.shuffle(&mut shuffle_rng);

        for batch in order.chunks(cfg.batch_size) {
            let batch_targets: usize = batch
                .iter()
                .map(|&i| {
                    seqs[i].iter().filter(|&&t| t != PAD_INDEX).count().saturating_sub(1)
                })
                .sum();
            if batch_targets == 0 {
                continue;
            }
            grads.fill(0.0);
            head_grads.fill(0.0);
            let weight = 1.0 / batch_targets as f64;
            let v = layout.v;
            let h_dim = layout.h;
            let mut dlogits = vec![0.0; v];
            for &idx in batch {
                let steps = lstm_run(&params, &layout, &seqs[idx]);
                if steps.len() < 2 {
                    continue;
                }
                let mut dh_extra = vec![vec![0.0; h_dim]; steps.len()];
                for k in 0..steps.len() - 1 {
                    let logits = lm_logits(&params, &head, &layout, &steps[k].h);
                    softmax_ce(&logits, steps[k + 1].tok, &mut dlogits);
                    for (vi, &dl) in dlogits.iter().enumerate() {
                        let dl = dl * weight;
                        if dl == 0.0 {
                            continue;
                        }
                        for col in 0..h_dim {
                            head_grads[vi * h_dim + col] += dl * steps[k].h[col];
                            dh_extra[k][col] += head[vi * h_dim + col] * dl;
                        }
                        head_grads[v * h_dim + vi] += dl;
                    }
                }
                lstm_backprop(&params, &layout, &steps, &dh_extra, &mut grads);
            }
            adam_params.step(&mut params, &grads, cfg.learning_rate);
            adam_head.step(&mut head, &head_grads, cfg.learning_rate);
        }

        let loss = lm_epoch_loss(&params, &head, &layout, &seqs);
        if !loss.is_finite() {
            return Err(DeepSEError::NonFiniteLoss { epoch });
        }
        let improved = losses.last().is_none_or(|&prev| loss < prev - 1e-9);
        losses.push(loss);
        if improved {
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs == cfg.patience {
                break;
            }
        }
    }

    Ok(LmModel { encoder_len: layout.encoder_len(), params, head, losses })
}

/// Fraction of next-token targets the language model predicts exactly
/// (argmax over the vocabulary; ties go to the lower index).
pub fn lm_accuracy(lm: &LmModel, vocab: &Vocab, cfg: &DeepSEConfig, issues: &[Issue]) -> f64 {
    let layout = Layout::new(vocab.len(), cfg);
    let mut hits = 0usize;
    let mut count = 0usize;
    for issue in issues {
        let seq = encode(issue, vocab, cfg.max_tokens);
        let steps = lstm_run(&lm.params, &layout, &seq);
        for k in 0..steps.len().saturating_sub(1) {
            let logits = lm_logits(&lm.params, &lm.head, &layout, &steps[k].h);
            let mut best = 0;
            for (vi, &l) in logits.iter().enumerate().skip(1) {
                if l > logits[best] {
                    best = vi;
                }
            }
            if best == steps[k + 1].tok {
                hits += 1;
            }
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        hits as f64 / count as f64
    }
}

/// Compares analytic gradients of the full-batch mean-absolute-error loss
/// against central finite differences over `n_params` sampled parameters
/// and returns the maximum relative error.
///
/// Sampling is restricted to parameters whose analytic gradient exceeds
/// the finite-difference noise floor: a central difference of a loss of
/// magnitude L resolves gradients only down to about eps * L / step, so
/// components below 1e-5 would drown in f64 cancellation regardless of
/// backprop correctness. The check is only meaningful away from the loss
/// kinks: the caller's sample should keep every |prediction - label| well
/// above `step`.
pub fn gradient_check(
    cfg: &DeepSEConfig,
    sample: &[Issue],
    n_params: usize,
    step: f64,
) -> Result<f64, DeepSEError> {
    cfg.validate()?;
    if sample.is_empty() {
        return Err(DeepSEError::EmptyTraining);
    }
    let vocab = build_vocab(sample, cfg.vocab_size);
    let layout = Layout::new(vocab.len(), cfg);
    let mut params = init_params(&layout, cfg.seed);
    let seqs: Vec<Vec<usize>> =
        sample.iter().map(|i| encode(i, &vocab, cfg.max_tokens)).collect();
    let targets: Vec<f64> = sample.iter().map(|i| i.story_point).collect();

    let mut grads = vec![0.0; layout.total()];
    let weight = 1.0 / seqs.len() as f64;
    for (seq, &y) in seqs.iter().zip(&targets) {
        let fwd = forward_doc(&params, &layout, cfg.rhwn_steps, seq);
        let residual = fwd.pred - y;
        let dpred = if residual > 0.0 {
            weight
        } else if residual < 0.0 {
            -weight
        } else {
            0.0
        };
        backward_doc(&params, &layout, &fwd, dpred, &mut grads);
    }

    let candidates: Vec<usize> =
        (0..layout.total()).filter(|&i| grads[i].abs() > 1e-5).collect();
    let mut picks = candidates.clone();
    let mut pick_rng = rng::stream(rng::combine(cfg.seed, SALT_GRAD));
    picks.shuffle(&mut pick_rng);
    picks.truncate(n_params.min(candidates.len()));

    let mut max_rel = 0.0f64;
    for idx in picks {
        let saved = params[idx];
        params[idx] = saved + step;
        let up = mean_abs_loss(&params, &layout, cfg.rhwn_steps, &seqs, &targets);
        params[idx] = saved - step;
        let down = mean_abs_loss(&params, &layout, cfg.rhwn_steps, &seqs, &targets);
        params[idx] = saved;
        let numeric = (up - down) / (2.0 * step);
        let denom = grads[idx].abs().max(numeric.abs());
        if denom > 1e-10 {
            max_rel = max_rel.max((grads[idx] - numeric).abs() / denom);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CapMode, IssueDataset, Scenario, SplitPlan};
    use chrono::{TimeZone, Utc};

    fn issue(key: &str, text: &str, sp: f64) -> Issue {
        Issue {
            issue_key: key.into(),
            project_key: "P".into(),
            repository: "r".into(),
            created: Utc.with_ymd_and_hms(2016, 1, 1, 0, 0, 0).unwrap(),
            resolved: None,
            issue_type: "Story".into(),
            components: vec![],
            title: text.into(),
            description: String::new(),
            story_point: sp,
            sp_assignment_count: Some(1),
            fields_changed_after_sp: Some(false),
            is_resolved: true,
        }
    }

    fn tiny_cfg() -> DeepSEConfig {
        DeepSEConfig {
            embed_dim: 8,
            lstm_dim: 8,
            rhwn_layers: 1,
            rhwn_steps: 2,
            max_tokens: 12,
            vocab_size: 64,
            learning_rate: 0.01,
            batch_size: 16,
            max_epochs: 60,
            patience: 10,
            seed: 7,
            pretrain: false,
        }
    }

    /// Two disjoint-vocabulary clusters labeled 1 and 8, interleaved so a
    /// chronological-style index split keeps both clusters in every part.
    fn cluster_corpus(n: usize) -> Vec<Issue> {
        let low = ["tiny tweak", "small fix", "minor copy edit", "trivial patch"];
        let high = [
            "rebuild persistence engine",
            "migrate storage backend",
            "overhaul scheduler core",
            "rewrite replication protocol",
        ];
        (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    issue(&format!("C-{i}"), low[(i / 2) % low.len()], 1.0)
                } else {
                    issue(&format!("C-{i}"), high[(i / 2) % high.len()], 8.0)
                }
            })
            .collect()
    }

    fn plan_over(n_train: usize, n_val: usize, n_test: usize) -> SplitPlan {
        SplitPlan {
            scenario: Scenario::WithinProject,
            train: (0..n_train).collect(),
            validation: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..n_train + n_val + n_test).collect(),
            cap_mode: CapMode::None,
            cap_value: None,
        }
    }

    fn cluster_dataset(n: usize) -> IssueDataset {
        let mut issues = cluster_corpus(n);
        for (i, issue) in issues.iter_mut().enumerate() {
            issue.created = Utc.with_ymd_and_hms(2016, 1, 1, 0, 0, 0).unwrap()
                + chrono::Duration::minutes(i as i64);
        }
        IssueDataset::new(issues).unwrap()
    }

    #[test]
    fn vocab_ranks_by_frequency_then_token() {
        let train = vec![issue("A-1", "a b b", 1.0)];
        let vocab = build_vocab(&train, 10);
        assert_eq!(vocab.token_index("b"), 2);
        assert_eq!(vocab.token_index("a"), 3);
        assert_eq!(vocab.token_index("zzz"), OOV_INDEX);
    }

    #[test]
    fn vocab_truncates_to_budget() {
        let train = vec![issue("A-1", "a b b c c c", 1.0)];
        let vocab = build_vocab(&train, 3);
        assert_eq!(vocab.len(), 3);
        assert_eq!(vocab.token_index("c"), 2);
        assert_eq!(vocab.token_index("b"), OOV_INDEX);
        assert_eq!(vocab.token_index("a"), OOV_INDEX);
    }

    #[test]
    fn encode_pads_and_truncates() {
        let vocab = build_vocab(&[issue("A-1", "a b c", 1.0)], 10);
        let empty = issue("B-1", "", 1.0);
        assert_eq!(encode(&empty, &vocab, 5), vec![PAD_INDEX; 5]);

        let long_text = vec!["a"; 150].join(" ");
        let long = issue("B-2", &long_text, 1.0);
        let seq = encode(&long, &vocab, 100);
        assert_eq!(seq.len(), 100);
        assert!(seq.iter().all(|&t| t == vocab.token_index("a")));

        let short = issue("B-3", "a b c", 1.0);
        let seq = encode(&short, &vocab, 100);
        assert_eq!(seq.iter().filter(|&&t| t != PAD_INDEX).count(), 3);
        assert!(seq[3..].iter().all(|&t| t == PAD_INDEX));
    }

    #[test]
    fn trailing_padding_never_changes_the_document() {
        let cfg = tiny_cfg();
        let train = cluster_corpus(8);
        let vocab = build_vocab(&train, cfg.vocab_size);
        let layout = Layout::new(vocab.len(), &cfg);
        let params = init_params(&layout, 3);

        let pooled = |seq: &[usize]| {
            let steps = lstm_run(&params, &layout, seq);
            let mut doc = vec![0.0; layout.h];
            for step in &steps {
                for (d, &v) in doc.iter_mut().zip(&step.h) {
                    *d += v;
                }
            }
            doc.iter().map(|d| d / steps.len() as f64).collect::<Vec<f64>>()
        };
        let short = encode(&train[0], &vocab, 6);
        let long = encode(&train[0], &vocab, 40);
        assert_eq!(pooled(&short), pooled(&long));
        let a = forward_doc(&params, &layout, cfg.rhwn_steps, &short);
        let b = forward_doc(&params, &layout, cfg.rhwn_steps, &long);
        assert_eq!(a.pred, b.pred);
    }

    #[test]
    fn highway_with_zeroed_transform_gate_is_identity() {
        let cfg = tiny_cfg();
        let layout = Layout::new(10, &cfg);
        let mut params = init_params(&layout, 5);
        for layer in 0..layout.layers {
            params[layout.rhwn_wt(layer)].fill(0.0);
            params[layout.rhwn_bt(layer)].fill(-1e9);
        }
        let doc: Vec<f64> = (0..layout.h).map(|i| (i as f64 - 3.0) * 0.25).collect();
        let (_, z) = rhwn_run(&params, &layout, cfg.rhwn_steps, &doc);
        assert_eq!(z, doc);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        // labels far from the near-zero initial predictions keep every
        // perturbed loss on one side of the absolute-value kink
        let sample: Vec<Issue> = cluster_corpus(6)
            .into_iter()
            .map(|mut i| {
                i.story_point = 5.0;
                i
            })
            .collect();
        let err = gradient_check(&cfg, &sample, 8, 1e-6).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn finite_difference_step_sizes_agree() {
        let cfg = tiny_cfg();
        let sample: Vec<Issue> = cluster_corpus(6)
            .into_iter()
            .map(|mut i| {
                i.story_point = 5.0;
                i
            })
            .collect();
        let fine = gradient_check(&cfg, &sample, 8, 1e-6).unwrap();
        let coarse = gradient_check(&cfg, &sample, 8, 1e-5).unwrap();
        assert!(fine < 1e-4 && coarse < 1e-4, "fine {fine}, coarse {coarse}");
        let (lo, hi) = if fine < coarse { (fine, coarse) } else { (coarse, fine) };
        assert!(hi <= lo * 10.0 + 1e-12, "fine {fine}, coarse {coarse}");
    }

    #[test]
    fn learns_the_two_cluster_task() {
        let data = cluster_dataset(60);
        let plan = plan_over(40, 10, 10);
        let model = train(&plan, &data, &tiny_cfg()).unwrap();
        let test: Vec<Issue> = plan.test.iter().map(|&i| data.issues()[i].clone()).collect();
        let p = predict_deepse(&model, &test).unwrap();
        let mae = crate::metrics::mae(&p).unwrap();
        assert!(mae < 1.0, "test MAE {mae}");
        for entry in p.entries() {
            assert!(entry.predicted.is_finite() && entry.predicted >= 0.0);
        }
    }

    #[test]
    fn pretraining_also_learns_the_task() {
        let data = cluster_dataset(60);
        let plan = plan_over(40, 10, 10);
        let cfg = DeepSEConfig { pretrain: true, ..tiny_cfg() };
        let model = train(&plan, &data, &cfg).unwrap();
        let test: Vec<Issue> = plan.test.iter().map(|&i| data.issues()[i].clone()).collect();
        let mae = crate::metrics::mae(&predict_deepse(&model, &test).unwrap()).unwrap();
        assert!(mae < 1.0, "test MAE {mae}");
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = cluster_dataset(24);
        let plan = plan_over(16, 4, 4);
        let cfg = DeepSEConfig { max_epochs: 8, ..tiny_cfg() };
        let a = train(&plan, &data, &cfg).unwrap();
        let b = train(&plan, &data, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        let traces_a: Vec<(f64, f64)> =
            a.trace.iter().map(|s| (s.train_loss, s.val_loss)).collect();
        let traces_b: Vec<(f64, f64)> =
            b.trace.iter().map(|s| (s.train_loss, s.val_loss)).collect();
        assert_eq!(traces_a, traces_b);

        let other = train(&plan, &data, &DeepSEConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.params, other.params);
    }

    #[test]
    fn best_epoch_has_minimal_validation_loss() {
        let data = cluster_dataset(24);
        let plan = plan_over(16, 4, 4);
        let cfg = DeepSEConfig { max_epochs: 20, ..tiny_cfg() };
        let model = train(&plan, &data, &cfg).unwrap();
        let best = model.trace[model.best_epoch].val_loss;
        for stats in &model.trace {
            assert!(best <= stats.val_loss);
        }
    }

    #[test]
    fn frozen_learning_plateaus_after_exactly_patience_epochs() {
        // zero learning rate freezes the parameters, so epoch 0 is the
        // best and every later epoch ties without improving
        let data = cluster_dataset(24);
        let plan = plan_over(16, 4, 4);
        let cfg = DeepSEConfig { learning_rate: 0.0, max_epochs: 50, ..tiny_cfg() };
        let model = train(&plan, &data, &cfg).unwrap();
        assert_eq!(model.best_epoch, 0);
        assert_eq!(model.trace.len(), model.best_epoch + 1 + cfg.patience);
    }

    #[test]
    fn divergent_learning_rate_reports_non_finite_loss() {
        let data = cluster_dataset(24);
        let plan = plan_over(16, 4, 4);
        let cfg = DeepSEConfig { learning_rate: 1e300, ..tiny_cfg() };
        let err = train(&plan, &data, &cfg).unwrap_err();
        assert!(matches!(err, DeepSEError::NonFiniteLoss { .. }));
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn batch_prediction_equals_per_item_prediction() {
        let data = cluster_dataset(24);
        let plan = plan_over(16, 4, 4);
        let cfg = DeepSEConfig { max_epochs: 5, ..tiny_cfg() };
        let model = train(&plan, &data, &cfg).unwrap();
        let test: Vec<Issue> = plan.test.iter().map(|&i| data.issues()[i].clone()).collect();
        let batch = predict_deepse(&model, &test).unwrap();
        for (entry, issue) in batch.entries().iter().zip(&test) {
            let single = predict_deepse(&model, std::slice::from_ref(issue)).unwrap();
            assert_eq!(single.entries()[0].predicted, entry.predicted);
        }
    }

    #[test]
    fn checkpoint_round_trips_and_rejects_other_versions() {
        let data = cluster_dataset(24);
        let plan = plan_over(16, 4, 4);
        let cfg = DeepSEConfig { max_epochs: 3, ..tiny_cfg() };
        let model = train(&plan, &data, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save_checkpoint(&path).unwrap();
        let loaded = TrainedModel::load_checkpoint(&path).unwrap();
        assert_eq!(model, loaded);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = 99;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            TrainedModel::load_checkpoint(&path),
            Err(DeepSEError::BadArtifactVersion { found: 99 })
        ));
    }

    #[test]
    fn trace_csv_lists_one_row_per_epoch() {
        let data = cluster_dataset(24);
        let plan = plan_over(16, 4, 4);
        let cfg = DeepSEConfig { max_epochs: 4, ..tiny_cfg() };
        let model = train(&plan, &data, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        model.export_trace_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,val_loss,seconds");
        assert_eq!(lines.len(), 1 + model.trace.len());
        assert!(lines[1].starts_with("0,"));
    }

    #[test]
    fn language_model_memorizes_an_alternating_corpus() {
        let corpus: Vec<Issue> = (0..10)
            .map(|i| issue(&format!("L-{i}"), "ping pong ping pong ping pong", 1.0))
            .collect();
        let cfg = DeepSEConfig { max_epochs: 150, learning_rate: 0.02, ..tiny_cfg() };
        let vocab = build_vocab(&corpus, cfg.vocab_size);
        let lm = pretrain_lm(&corpus, &vocab, &cfg).unwrap();
        let accuracy = lm_accuracy(&lm, &vocab, &cfg, &corpus);
        assert_eq!(accuracy, 1.0, "losses: {:?}", lm.losses.last());
    }

    #[test]
    fn language_model_loss_is_non_increasing_after_convergence_window() {
        let sentences = [
            "open file handle", "close file handle", "parse config block",
            "write audit log", "flush output buffer", "retry failed request",
            "rotate session keys", "drain worker queue", "mount data volume",
            "verify checksum trailer",
        ];
        let corpus: Vec<Issue> = sentences
            .iter()
            .enumerate()
            .map(|(i, s)| issue(&format!("L-{i}"), s, 1.0))
            .collect();
        let cfg = DeepSEConfig { max_epochs: 120, learning_rate: 0.02, ..tiny_cfg() };
        let vocab = build_vocab(&corpus, cfg.vocab_size);
        let lm = pretrain_lm(&corpus, &vocab, &cfg).unwrap();
        assert!(lm.losses.len() > 10);
        let window = lm.losses.len() / 2;
        for pair in lm.losses[window..].windows(2) {
            assert!(pair[1] <= pair[0] + 1e-6, "late-epoch regression: {pair:?}");
        }
        assert!(lm.losses.last().unwrap() < &0.5);
    }

    #[test]
    fn language_model_accepts_titles_only() {
        let corpus: Vec<Issue> =
            (0..4).map(|i| issue(&format!("T-{i}"), "short title text", 2.0)).collect();
        let cfg = DeepSEConfig { max_epochs: 3, ..tiny_cfg() };
        let vocab = build_vocab(&corpus, cfg.vocab_size);
        assert!(pretrain_lm(&corpus, &vocab, &cfg).is_ok());
    }

    #[test]
    fn config_validation_rejects_degenerate_values() {
        let bad = DeepSEConfig { embed_dim: 0, ..DeepSEConfig::default() };
        assert!(matches!(bad.validate(), Err(DeepSEError::BadConfig(_))));
        let bad = DeepSEConfig { vocab_size: 2, ..DeepSEConfig::default() };
        assert!(matches!(bad.validate(), Err(DeepSEError::BadConfig(_))));
        let bad = DeepSEConfig { learning_rate: f64::NAN, ..DeepSEConfig::default() };
        assert!(matches!(bad.validate(), Err(DeepSEError::BadConfig(_))));
    }

    #[test]
    fn split_indices_are_validated() {
        let data = cluster_dataset(10);
        let mut plan = plan_over(6, 2, 2);
        plan.train.push(99);
        assert!(matches!(
            train(&plan, &data, &tiny_cfg()),
            Err(DeepSEError::BadSplitIndex { index: 99, len: 10 })
        ));
    }
}

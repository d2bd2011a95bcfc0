//! Categorical next-token models over the token vocabulary.
//!
//! Two small models share the [`NextTokenModel`] interface:
//!
//! * [`CountMarkov`]: order-k count table with additive smoothing.
//! * [`LinearSoftmax`]: one-hot window of the last `w` tokens mapped to
//!   logits by a single linear layer, trained on the teacher-forced
//!   cross-entropy `−Σ_h log p(z_h | z_<h)` summed over the label positions
//!   of an example and averaged over a batch.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::series_io::write_atomic;
use crate::tokenizer::{TokenId, TokenizerConfig, TrainingExample, PAD_ID};

pub trait NextTokenModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Distribution over the whole vocabulary for the token following
    /// `context`.
    fn probs(&self, context: &[TokenId]) -> Vec<f64>;
}

/// The last `k` tokens of `context`, left-padded with PAD.
fn tail_window(context: &[TokenId], k: usize) -> Vec<TokenId> {
    let take = context.len().min(k);
    let mut w = vec![PAD_ID; k - take];
    w.extend_from_slice(&context[context.len() - take..]);
    w
}

// ---------------------------------------------------------------------------
// Count-based Markov model

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "CountMarkovRepr", into = "CountMarkovRepr")]
pub struct CountMarkov {
    order: usize,
    smoothing: f64,
    vocab_size: usize,
    table: HashMap<Vec<TokenId>, ContextCounts>,
}

#[derive(Serialize, Deserialize)]
struct CountRow {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}

#[derive(Serialize, Deserialize)]
struct CountMarkovRepr {
    order: usize,
    smoothing: f64,
    vocab_size: usize,
    counts: Vec<CountRow>,
}

impl From<CountMarkov> for CountMarkovRepr {
    fn from(m: CountMarkov) -> Self {
        let mut counts: Vec<CountRow> = m
            .table
            .into_iter()
            .map(|(context, c)| CountRow {
                context,
                next: c.next.into_iter().collect(),
            })
            .collect();
        counts.sort_by(|a, b| a.context.cmp(&b.context));
        CountMarkovRepr {
            order: m.order,
            smoothing: m.smoothing,
            vocab_size: m.vocab_size,
            counts,
        }
    }
}

impl From<CountMarkovRepr> for CountMarkov {
    fn from(r: CountMarkovRepr) -> Self {
        let table = r
            .counts
            .into_iter()
            .map(|row| {
                let next: BTreeMap<TokenId, u64> = row.next.into_iter().collect();
                let total = next.values().sum();
                (row.context, ContextCounts { total, next })
            })
            .collect();
        CountMarkov {
            order: r.order,
            smoothing: r.smoothing,
            vocab_size: r.vocab_size,
            table,
        }
    }
}

impl CountMarkov {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Number of times `next` followed the (padded) context.
    pub fn count(&self, context: &[TokenId], next: TokenId) -> u64 {
        self.table
            .get(&tail_window(context, self.order))
            .and_then(|c| c.next.get(&next).copied())
            .unwrap_or(0)
    }
}

impl NextTokenModel for CountMarkov {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn probs(&self, context: &[TokenId]) -> Vec<f64> {
        let v = self.vocab_size;
        let key = tail_window(context, self.order);
        let eps = self.smoothing;
        match self.table.get(&key) {
            None => vec![1.0 / v as f64; v],
            Some(c) => {
                let denom = c.total as f64 + eps * v as f64;
                let mut p = vec![eps / denom; v];
                for (&tok, &n) in &c.next {
                    p[tok as usize] = (n as f64 + eps) / denom;
                }
                p
            }
        }
    }
}

/// Counts every `(k-token context → next token)` transition in the corpus.
/// Positions with fewer than `k` predecessors see a PAD-filled context.
pub fn fit_markov(
    corpus: &[Vec<TokenId>],
    order: usize,
    smoothing: f64,
    vocab_size: usize,
) -> Result<CountMarkov> {
    if order == 0 {
        return Err(Error::Config("model.order must be at least 1".into()));
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(Error::Config("model.smoothing must be positive".into()));
    }
    let mut table: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
    for seq in corpus {
        for (pos, &tok) in seq.iter().enumerate() {
            if tok as usize >= vocab_size {
                return Err(Error::Validation(format!(
                    "token {tok} outside a vocabulary of {vocab_size}"
                )));
            }
            let entry = table.entry(tail_window(&seq[..pos], order)).or_default();
            entry.total += 1;
            *entry.next.entry(tok).or_insert(0) += 1;
        }
    }
    Ok(CountMarkov {
        order,
        smoothing,
        vocab_size,
        table,
    })
}

// ---------------------------------------------------------------------------
// Linear softmax model

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmax {
    window: usize,
    vocab_size: usize,
    /// Row `slot * V + token` holds the logit contribution of `token` seen
    /// at window slot `slot` (slot 0 is the oldest).
    weights: Vec<f64>,
    bias: Vec<f64>,
    #[serde(default)]
    loss_trace: Vec<f64>,
}

/// Gradient with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearGradient {
    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.bias)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Per-position softmax-minus-onehot residual and the parameter rows it
/// flows into.
struct Residual {
    rows: Vec<usize>,
    delta: Vec<f64>,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

impl LinearSoftmax {
    pub fn zeros(window: usize, vocab_size: usize) -> Self {
        LinearSoftmax {
            window,
            vocab_size,
            weights: vec![0.0; window * vocab_size * vocab_size],
            bias: vec![0.0; vocab_size],
            loss_trace: Vec::new(),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Mean per-example training loss recorded after each epoch.
    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    fn feature_rows(&self, context: &[TokenId]) -> Vec<usize> {
        tail_window(context, self.window)
            .iter()
            .enumerate()
            .map(|(slot, &tok)| slot * self.vocab_size + tok as usize)
            .collect()
    }

    pub fn logits(&self, context: &[TokenId]) -> Vec<f64> {
        let v = self.vocab_size;
        let mut out = self.bias.clone();
        for row in self.feature_rows(context) {
            for (o, w) in out.iter_mut().zip(&self.weights[row * v..(row + 1) * v]) {
                *o += w;
            }
        }
        out
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            Some(t) => Err(Error::Validation(format!(
                "token {t} outside a vocabulary of {}",
                self.vocab_size
            ))),
            None => Ok(()),
        }
    }

    /// Teacher-forced residuals for every label position of `example`.
    fn residuals(&self, example: &TrainingExample) -> Vec<Residual> {
        let mut ctx = example.context.clone();
        let mut out = Vec::with_capacity(example.labels.len());
        for &label in &example.labels {
            let mut delta: Vec<f64> = log_softmax(&self.logits(&ctx))
                .into_iter()
                .map(f64::exp)
                .collect();
            delta[label as usize] -= 1.0;
            out.push(Residual {
                rows: self.feature_rows(&ctx),
                delta,
            });
            ctx.push(label);
        }
        out
    }

    fn apply(&mut self, residuals: &[Residual], step: f64) {
        let v = self.vocab_size;
        for r in residuals {
            for &row in &r.rows {
                for (w, d) in self.weights[row * v..(row + 1) * v].iter_mut().zip(&r.delta) {
                    *w -= step * d;
                }
            }
            for (b, d) in self.bias.iter_mut().zip(&r.delta) {
                *b -= step * d;
            }
        }
    }
}

impl NextTokenModel for LinearSoftmax {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn probs(&self, context: &[TokenId]) -> Vec<f64> {
        log_softmax(&self.logits(context))
            .into_iter()
            .map(f64::exp)
            .collect()
    }
}

/// Sum over label positions of `−log p(true token | running context)`, the
/// running context growing by one true token per step.
pub fn cross_entropy_loss(model: &LinearSoftmax, example: &TrainingExample) -> f64 {
    let mut ctx = example.context.clone();
    let mut loss = 0.0;
    for &label in &example.labels {
        let lp = log_softmax(&model.logits(&ctx))[label as usize];
        if lp == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        loss -= lp;
        ctx.push(label);
    }
    loss
}

/// Gradient of the batch-mean loss with respect to all parameters.
pub fn grad_cross_entropy(model: &LinearSoftmax, batch: &[TrainingExample]) -> Result<LinearGradient> {
    if batch.is_empty() {
        return Err(Error::Validation("gradient of an empty batch".into()));
    }
    let v = model.vocab_size;
    let mut g = LinearGradient {
        weights: vec![0.0; model.weights.len()],
        bias: vec![0.0; v],
    };
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        model.check_tokens(&ex.context)?;
        model.check_tokens(&ex.labels)?;
        for r in model.residuals(ex) {
            for &row in &r.rows {
                for (w, d) in g.weights[row * v..(row + 1) * v].iter_mut().zip(&r.delta) {
                    *w += scale * d;
                }
            }
            for (b, d) in g.bias.iter_mut().zip(&r.delta) {
                *b += scale * d;
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTrainConfig {
    pub window: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// One gradient step per epoch on the whole corpus instead of one step
    /// per example.
    pub full_batch: bool,
}

impl Default for LinearTrainConfig {
    fn default() -> Self {
        LinearTrainConfig {
            window: 8,
            epochs: 50,
            learning_rate: 0.5,
            full_batch: false,
        }
    }
}

fn mean_loss(model: &LinearSoftmax, corpus: &[TrainingExample]) -> f64 {
    corpus.iter().map(|ex| cross_entropy_loss(model, ex)).sum::<f64>() / corpus.len() as f64
}

/// Plain gradient descent from zero parameters with the learning rate
/// annealed linearly to 0 over all steps. Example order is shuffled per epoch
/// from `seed`.
pub fn train_linear(
    corpus: &[TrainingExample],
    vocab_size: usize,
    cfg: &LinearTrainConfig,
    seed: u64,
) -> Result<LinearSoftmax> {
    if corpus.is_empty() {
        return Err(Error::Validation("cannot train on an empty corpus".into()));
    }
    if cfg.window == 0 {
        return Err(Error::Config("model.window must be at least 1".into()));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::Config("model.learning_rate must be non-negative".into()));
    }
    let mut model = LinearSoftmax::zeros(cfg.window, vocab_size);
    for ex in corpus {
        model.check_tokens(&ex.context)?;
        model.check_tokens(&ex.labels)?;
    }
    let steps_per_epoch = if cfg.full_batch { 1 } else { corpus.len() };
    let total = (cfg.epochs * steps_per_epoch) as f64;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..cfg.epochs {
        if cfg.full_batch {
            let lr = cfg.learning_rate * (1.0 - step as f64 / total);
            let residuals: Vec<Residual> = corpus.iter().flat_map(|ex| model.residuals(ex)).collect();
            model.apply(&residuals, lr / corpus.len() as f64);
            step += 1;
        } else {
            order.shuffle(&mut derive_rng(seed, &[epoch as u64]));
            for &i in &order {
                let lr = cfg.learning_rate * (1.0 - step as f64 / total);
                let residuals = model.residuals(&corpus[i]);
                model.apply(&residuals, lr);
                step += 1;
            }
        }
        let loss = mean_loss(&model, corpus);
        if !loss.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("loss became {loss}"),
            });
        }
        model.loss_trace.push(loss);
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// Serialization

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyModel {
    CountMarkov(CountMarkov),
    LinearSoftmax(LinearSoftmax),
}

impl NextTokenModel for AnyModel {
    fn vocab_size(&self) -> usize {
        match self {
            AnyModel::CountMarkov(m) => m.vocab_size(),
            AnyModel::LinearSoftmax(m) => m.vocab_size(),
        }
    }

    fn probs(&self, context: &[TokenId]) -> Vec<f64> {
        match self {
            AnyModel::CountMarkov(m) => m.probs(context),
            AnyModel::LinearSoftmax(m) => m.probs(context),
        }
    }
}

/// On-disk model document: the model plus the tokenizer it was trained with
/// and the run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub tokenizer: TokenizerConfig,
    pub model: AnyModel,
    pub metadata: BTreeMap<String, String>,
}

impl ModelFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::Validation(e.to_string()))?;
        write_atomic(path, &json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        file.tokenizer.validate()?;
        if file.model.vocab_size() != file.tokenizer.num_bins + 2 {
            return Err(Error::Validation(format!(
                "model vocabulary {} does not match tokenizer ({} bins)",
                file.model.vocab_size(),
                file.tokenizer.num_bins
            )));
        }
        Ok(file)
    }
}

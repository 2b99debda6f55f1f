use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{forward_loss, EventBatch};
use crate::data::{window_sample, BehaviorSequence};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Adam, AdamConfig, Graph, Mode, Scalar};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Window length sampled from longer sequences; capped by the model's
    /// position budget.
    pub window: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            steps: 1000,
            batch_size: 16,
            window: 32,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    /// Training loss of every step, in order.
    pub losses: Vec<f64>,
}

/// `(1/D) Σ_k ln V_k`: the loss of a uniform predictive distribution.
pub fn uniform_loss(cardinalities: &[usize]) -> f64 {
    cardinalities.iter().map(|&v| (v as f64).ln()).sum::<f64>() / cardinalities.len() as f64
}

/// Seeded epoch-shuffled mini-batches, each sequence windowed on draw.
pub(crate) struct BatchStream<'a> {
    corpus: &'a [BehaviorSequence],
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    window: usize,
    shuffle: rng::SeededRng,
    window_rng: rng::SeededRng,
}

impl<'a> BatchStream<'a> {
    pub(crate) fn new(
        corpus: &'a [BehaviorSequence],
        batch_size: usize,
        window: usize,
        seed: u64,
        label: &str,
    ) -> Self {
        Self {
            corpus,
            order: (0..corpus.len()).collect(),
            cursor: corpus.len(),
            batch_size,
            window,
            shuffle: rng::stream(seed, &format!("{label}.shuffle")),
            window_rng: rng::stream(seed, &format!("{label}.window")),
        }
    }

    pub(crate) fn next_batch(&mut self) -> Vec<BehaviorSequence> {
        let mut out = Vec::with_capacity(self.batch_size);
        while out.len() < self.batch_size.min(self.corpus.len()) {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.shuffle);
                self.cursor = 0;
            }
            let s = &self.corpus[self.order[self.cursor]];
            out.push(window_sample(s, self.window, &mut self.window_rng));
            self.cursor += 1;
        }
        out
    }
}

/// Next-event pretraining with Adam. Deterministic given `cfg.seed` and
/// the model's initial parameters.
pub fn pretrain<S: Scalar>(
    model: &mut Model<S>,
    corpus: &[BehaviorSequence],
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    if corpus.is_empty() {
        return Err(Error::Config("pretraining corpus is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let window = cfg.window.min(model.config.t_max - 1).max(1);
    let n_dims = model.config.n_dims();
    let mut batches = BatchStream::new(corpus, cfg.batch_size, window, cfg.seed, "pretrain");
    let mut dropout = rng::stream(cfg.seed, "pretrain.dropout");
    let mut adam = Adam::new(cfg.adam());
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let seqs = batches.next_batch();
        let batch = EventBatch::from_sequences(&seqs, n_dims)?;
        let mut g = Graph::new();
        let loss = forward_loss(&mut g, model, &batch, Mode::Train, &mut dropout)?;
        let value = g.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let mut grads = g.backward(loss)?;
        if let Some(clip) = cfg.grad_clip {
            grads.clip_norm(clip);
        }
        adam.step(&mut model.params, &grads, |_| 1.0)?;
        losses.push(value);
    }
    Ok(PretrainReport { losses })
}

/// Eval-mode reconstruction loss averaged over every target position of
/// `seqs` (each truncated to the model's position budget).
pub fn evaluate_loss<S: Scalar>(
    model: &Model<S>,
    seqs: &[BehaviorSequence],
    batch_size: usize,
) -> Result<f64> {
    let max_events = model.config.t_max - 1;
    let mut total = 0.0;
    let mut count = 0usize;
    let mut unused = rng::stream(0, "eval");
    for chunk in seqs.chunks(batch_size.max(1)) {
        let trimmed: Vec<BehaviorSequence> = chunk
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.events.truncate(max_events);
                s
            })
            .collect();
        let batch = EventBatch::from_sequences(&trimmed, model.config.n_dims())?;
        let mut g = Graph::new();
        let loss = forward_loss(&mut g, model, &batch, Mode::Eval, &mut unused)?;
        total += g.value(loss).item().as_f64() * batch.n_events() as f64;
        count += batch.n_events();
    }
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(total / count as f64)
}

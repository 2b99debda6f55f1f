use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    anomaly_features, diff_op, head_logits, AnomalyHeadConfig, ImbalancedSampler, SamplerConfig,
};
use crate::data::BehaviorSequence;
use crate::error::{Error, Result};
use crate::model::{init_param, Model};
use crate::numerics::{Adam, AdamConfig, Graph, Mode, ParamGroup, ParamStore, Scalar, Var};
use crate::pretrain::{forward_hidden, EventBatch};
use crate::rng;

const SCORE_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub head: AnomalyHeadConfig,
    pub batch_size: usize,
    pub positive_fraction: f64,
    pub epochs: usize,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    /// Keep only this many (seeded, random) positives for training.
    pub max_positives: Option<usize>,
    pub lr: f64,
    /// Learning-rate multiplier of backbone parameters; 0 freezes them.
    pub backbone_lr_mult: f64,
    pub grad_clip: Option<f64>,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            head: AnomalyHeadConfig::default(),
            batch_size: 32,
            positive_fraction: 0.25,
            epochs: 3,
            max_steps: None,
            max_positives: None,
            lr: 1e-3,
            backbone_lr_mult: 0.1,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

impl SftConfig {
    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            batch_size: self.batch_size,
            positive_fraction: self.positive_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        self.sampler().validate()?;
        if !(self.backbone_lr_mult >= 0.0) {
            return Err(Error::Config("backbone_lr_mult must be >= 0".into()));
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    /// Accuracy on the (rebalanced) training batches, train mode.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserScore {
    pub user_id: String,
    pub score: f64,
}

/// Training target of a label under an `n_classes` head: binary heads
/// collapse every fraud class to 1.
pub fn class_target(label: u32, n_classes: usize) -> Result<usize> {
    if n_classes == 2 {
        return Ok(usize::from(label != 0));
    }
    let l = label as usize;
    if l >= n_classes {
        return Err(Error::Schema(format!(
            "label {label} outside a {n_classes}-class head"
        )));
    }
    Ok(l)
}

/// The most recent `max` events; an onset before the kept span moves to 0.
pub fn recent_events(seq: &BehaviorSequence, max: usize) -> BehaviorSequence {
    if seq.len() <= max {
        return seq.clone();
    }
    let start = seq.len() - max;
    BehaviorSequence {
        user_id: seq.user_id.clone(),
        events: seq.events[start..].to_vec(),
        label: seq.label,
        anomaly_onset: seq.anomaly_onset.map(|o| o.saturating_sub(start)),
    }
}

/// Head logits `[B, n_classes]` for a batch of sequences.
pub fn sft_logits<S: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<S>,
    model: &Model<S>,
    seqs: &[&BehaviorSequence],
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let batch = EventBatch::from_sequences(seqs.iter().copied(), model.config.n_dims())?;
    let h = forward_hidden(g, model, &batch, mode, rng)?;
    let rows = batch.seq_rows();
    let mut feats = Vec::with_capacity(batch.batch());
    for (b, &len) in batch.lengths().iter().enumerate() {
        // Row 0 of each block is BOS; rows 1..=len hold the events.
        let hb = g.slice_rows(h, b * rows + 1, len)?;
        let d = diff_op(g, hb)?;
        feats.push(anomaly_features(g, model, d)?);
    }
    let f = g.concat_rows(&feats)?;
    head_logits(g, model, f, mode, rng)
}

fn check_schema<S>(model: &Model<S>, seq: &BehaviorSequence) -> Result<()> {
    let cards = &model.config.cardinalities;
    for (t, e) in seq.events.iter().enumerate() {
        if e.attrs.len() != cards.len() {
            return Err(Error::Schema(format!(
                "user {}: event {t} has {} attributes, checkpoint expects {}",
                seq.user_id,
                e.attrs.len(),
                cards.len()
            )));
        }
        if let Some(k) = e
            .attrs
            .iter()
            .zip(cards)
            .position(|(&a, &v)| a as usize >= v)
        {
            return Err(Error::Schema(format!(
                "user {}: event {t} attribute {k} id {} exceeds vocabulary {}",
                seq.user_id, e.attrs[k], cards[k]
            )));
        }
    }
    Ok(())
}

fn prepare<S>(
    model: &Model<S>,
    corpus: &[BehaviorSequence],
    min_events: usize,
) -> Result<Vec<BehaviorSequence>> {
    let max = model.config.t_max - 1;
    corpus
        .iter()
        .map(|s| {
            check_schema(model, s)?;
            if s.len() < min_events {
                return Err(Error::SequenceTooShort {
                    context: "anomaly head input",
                    len: s.len(),
                    min: min_events,
                });
            }
            Ok(recent_events(s, max))
        })
        .collect()
}

/// Copies the backbone and attaches a freshly initialized head.
fn attach_head<S: Scalar>(
    backbone: &Model<S>,
    head: &AnomalyHeadConfig,
    seed: u64,
) -> Result<Model<S>> {
    let mut params = ParamStore::new();
    for (_, p) in backbone.params.iter() {
        if p.group == ParamGroup::Backbone {
            params.insert(p.name.clone(), p.value.clone(), ParamGroup::Backbone)?;
        }
    }
    let mut r = rng::stream(seed, "sft.head");
    for (name, shape) in head.parameter_shapes(backbone.config.d_model) {
        let v = init_param(&name, &shape, &mut r);
        params.insert(name, v, ParamGroup::Head)?;
    }
    Ok(Model {
        config: backbone.config.clone(),
        head: Some(head.clone()),
        params,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fine-tunes a copy of `backbone` with a new anomaly head. Any head the
/// input model already carries is discarded.
pub fn finetune_sft<S: Scalar>(
    backbone: &Model<S>,
    corpus: &[BehaviorSequence],
    cfg: &SftConfig,
) -> Result<(Model<S>, Vec<EpochMetrics>)> {
    cfg.validate()?;
    let data = prepare(backbone, corpus, cfg.head.min_events())?;
    let targets: Vec<usize> = data
        .iter()
        .map(|s| class_target(s.label, cfg.head.n_classes))
        .collect::<Result<_>>()?;
    let mut positives: Vec<usize> = (0..data.len()).filter(|&i| targets[i] != 0).collect();
    let negatives: Vec<usize> = (0..data.len()).filter(|&i| targets[i] == 0).collect();
    if let Some(m) = cfg.max_positives {
        positives.shuffle(&mut rng::stream(cfg.seed, "sft.few_shot"));
        positives.truncate(m);
        positives.sort_unstable();
    }
    let mut sampler = ImbalancedSampler::new(positives, negatives, &cfg.sampler(), cfg.seed)?;
    let mut model = attach_head(backbone, &cfg.head, cfg.seed)?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut dropout = rng::stream(cfg.seed, "sft.dropout");
    let per_epoch = sampler.batches_per_epoch();
    let total = cfg.max_steps.map_or(cfg.epochs * per_epoch, |m| {
        m.min(cfg.epochs.max(1) * per_epoch)
    });
    let mult = cfg.backbone_lr_mult;
    let mut metrics = Vec::new();
    let (mut loss_sum, mut correct, mut seen, mut epoch_steps) = (0.0, 0usize, 0usize, 0usize);
    for step in 0..total {
        let (pos, neg) = sampler.next_batch();
        let idx: Vec<usize> = pos.into_iter().chain(neg).collect();
        let seqs: Vec<&BehaviorSequence> = idx.iter().map(|&i| &data[i]).collect();
        let tgt: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
        let mut g = Graph::new();
        let logits = sft_logits(&mut g, &model, &seqs, Mode::Train, &mut dropout)?;
        let loss = g.softmax_ce(logits, &tgt)?;
        let value = g.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let lv = g.value(logits);
        for (b, &t) in tgt.iter().enumerate() {
            let row: Vec<f64> = lv.row(b).iter().map(|v| v.as_f64()).collect();
            correct += usize::from(argmax(&row) == t);
        }
        seen += tgt.len();
        loss_sum += value;
        epoch_steps += 1;
        let mut grads = g.backward(loss)?;
        if let Some(c) = cfg.grad_clip {
            grads.clip_norm(c);
        }
        adam.step(&mut model.params, &grads, |grp| match grp {
            ParamGroup::Backbone => mult,
            ParamGroup::Head => 1.0,
        })?;
        if (step + 1) % per_epoch == 0 || step + 1 == total {
            metrics.push(EpochMetrics {
                epoch: metrics.len(),
                steps: step + 1,
                loss: loss_sum / epoch_steps as f64,
                accuracy: correct as f64 / seen as f64,
            });
            (loss_sum, correct, seen, epoch_steps) = (0.0, 0, 0, 0);
        }
    }
    Ok((model, metrics))
}

/// Eval-mode head logits of every sequence, in corpus order.
fn eval_logits<S: Scalar>(model: &Model<S>, corpus: &[BehaviorSequence]) -> Result<Vec<Vec<f64>>> {
    let head = model
        .head
        .as_ref()
        .ok_or_else(|| Error::Config("model has no anomaly head".into()))?;
    let data = prepare(model, corpus, head.min_events())?;
    let chunks: Vec<Vec<Vec<f64>>> = data
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| {
            let refs: Vec<&BehaviorSequence> = chunk.iter().collect();
            let mut g = Graph::new();
            let mut unused = rng::stream(0, "score");
            let l = sft_logits(&mut g, model, &refs, Mode::Eval, &mut unused)?;
            let v = g.value(l);
            Ok((0..chunk.len())
                .map(|b| v.row(b).iter().map(|x| x.as_f64()).collect())
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Binary fraud score `softmax(logits)[1]` of every user, sorted by score
/// descending with ties broken by ascending user id.
pub fn score_users<S: Scalar>(
    model: &Model<S>,
    corpus: &[BehaviorSequence],
) -> Result<Vec<UserScore>> {
    match &model.head {
        Some(h) if h.n_classes == 2 => {}
        Some(h) => {
            return Err(Error::Config(format!(
                "scoring needs a binary head, checkpoint has {} classes",
                h.n_classes
            )))
        }
        None => return Err(Error::Config("model has no anomaly head".into())),
    }
    let logits = eval_logits(model, corpus)?;
    let mut out: Vec<UserScore> = corpus
        .iter()
        .zip(logits)
        .map(|(s, l)| UserScore {
            user_id: s.user_id.clone(),
            score: 1.0 / (1.0 + (l[0] - l[1]).exp()),
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.user_id.cmp(&b.user_id))
    });
    Ok(out)
}

/// Arg-max class of every sequence, in corpus order.
pub fn predict_classes<S: Scalar>(
    model: &Model<S>,
    corpus: &[BehaviorSequence],
) -> Result<Vec<usize>> {
    Ok(eval_logits(model, corpus)?
        .iter()
        .map(|l| argmax(l))
        .collect())
}

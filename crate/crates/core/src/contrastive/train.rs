use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::infonce_loss;
use crate::data::BehaviorSequence;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Adam, AdamConfig, Graph, Mode, Scalar, Var};
use crate::pretrain::{forward_hidden, EventBatch};
use crate::rng;
use crate::sft::recent_events;

const EMBED_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    pub lr: f64,
    pub grad_clip: Option<f64>,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.05,
            batch_size: 64,
            epochs: 1,
            max_steps: None,
            lr: 1e-3,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContrastiveReport {
    pub losses: Vec<f64>,
    /// Batches dropped because they held fewer than two sequences.
    pub skipped_batches: usize,
}

/// Held-out InfoNCE and mean positive-pair cosine of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastiveEval {
    pub loss: f64,
    pub alignment: f64,
}

/// Hidden state at the last real event of each sequence, `[B, d_model]`.
pub fn embed_sequences<S: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<S>,
    model: &Model<S>,
    batch: &EventBatch,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let h = forward_hidden(g, model, batch, mode, rng)?;
    let rows = batch.seq_rows();
    let last: Vec<usize> = batch
        .lengths()
        .iter()
        .enumerate()
        .map(|(b, &l)| b * rows + l)
        .collect();
    g.select_rows(h, &last)
}

/// Embedding of one sequence (its most recent events if it is longer than
/// the model's position budget).
pub fn embed_sequence<S: Scalar, R: Rng + ?Sized>(
    model: &Model<S>,
    seq: &BehaviorSequence,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let s = recent_events(seq, model.config.t_max - 1);
    let batch = EventBatch::from_sequences([&s], model.config.n_dims())?;
    let mut g = Graph::new();
    let e = embed_sequences(&mut g, model, &batch, mode, rng)?;
    Ok(g.value(e).to_f64_vec())
}

/// Eval-mode embeddings of a corpus, in order.
pub fn embed_corpus<S: Scalar>(
    model: &Model<S>,
    corpus: &[BehaviorSequence],
) -> Result<Vec<Vec<f64>>> {
    let max = model.config.t_max - 1;
    let chunks: Vec<Vec<Vec<f64>>> = corpus
        .par_chunks(EMBED_CHUNK)
        .map(|chunk| {
            let trimmed: Vec<BehaviorSequence> =
                chunk.iter().map(|s| recent_events(s, max)).collect();
            let batch = EventBatch::from_sequences(&trimmed, model.config.n_dims())?;
            let mut g = Graph::new();
            let mut unused = rng::stream(0, "embed");
            let e = embed_sequences(&mut g, model, &batch, Mode::Eval, &mut unused)?;
            let v = g.value(e);
            Ok((0..chunk.len())
                .map(|b| v.row(b).iter().map(|x| x.as_f64()).collect())
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Two train-mode views of every sequence in one forward pass: the batch
/// is stacked twice so each copy draws its own dropout mask.
fn two_views<S: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<S>,
    model: &Model<S>,
    seqs: &[BehaviorSequence],
    rng: &mut R,
) -> Result<(Var, Var)> {
    let n = seqs.len();
    let batch = EventBatch::from_sequences(seqs.iter().chain(seqs.iter()), model.config.n_dims())?;
    let e = embed_sequences(g, model, &batch, Mode::Train, rng)?;
    let v = g.slice_rows(e, 0, n)?;
    let v_pos = g.slice_rows(e, n, n)?;
    Ok((v, v_pos))
}

fn check_dropout<S>(model: &Model<S>) -> Result<()> {
    if model.config.dropout <= 0.0 {
        return Err(Error::Config(
            "contrastive views need dropout > 0; with p = 0 both views coincide".into(),
        ));
    }
    Ok(())
}

/// InfoNCE and alignment of `seqs` under dropout drawn from `seed`; no
/// parameters change.
pub fn evaluate_contrastive<S: Scalar>(
    model: &Model<S>,
    seqs: &[BehaviorSequence],
    tau: f64,
    seed: u64,
) -> Result<ContrastiveEval> {
    check_dropout(model)?;
    let trimmed: Vec<BehaviorSequence> = seqs
        .iter()
        .map(|s| recent_events(s, model.config.t_max - 1))
        .collect();
    let mut g = Graph::new();
    let mut r = rng::stream(seed, "contrastive.eval");
    let (v, vp) = two_views(&mut g, model, &trimmed, &mut r)?;
    let loss = infonce_loss(&mut g, v, vp, tau)?;
    let (a, b) = (g.value(v), g.value(vp));
    let mut total = 0.0;
    for i in 0..trimmed.len() {
        let (x, y) = (a.row(i), b.row(i));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p.as_f64() * q.as_f64()).sum();
        let nx = x.iter().map(|p| p.as_f64().powi(2)).sum::<f64>().sqrt();
        let ny = y.iter().map(|p| p.as_f64().powi(2)).sum::<f64>().sqrt();
        total += dot / (nx * ny);
    }
    Ok(ContrastiveEval {
        loss: g.value(loss).item().as_f64(),
        alignment: total / trimmed.len() as f64,
    })
}

/// Fine-tunes the whole backbone in place with dropout-view InfoNCE.
pub fn finetune_contrastive<S: Scalar>(
    model: &mut Model<S>,
    corpus: &[BehaviorSequence],
    cfg: &ContrastiveConfig,
) -> Result<ContrastiveReport> {
    check_dropout(model)?;
    if !(cfg.temperature > 0.0) {
        return Err(Error::Parameter(format!(
            "temperature must be > 0, got {}",
            cfg.temperature
        )));
    }
    if cfg.batch_size < 2 || corpus.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "contrastive training needs batch_size >= 2 and a corpus at least that large (batch {}, corpus {})",
            cfg.batch_size,
            corpus.len()
        )));
    }
    let max = model.config.t_max - 1;
    let data: Vec<BehaviorSequence> = corpus.iter().map(|s| recent_events(s, max)).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = rng::stream(cfg.seed, "contrastive.shuffle");
    let mut dropout = rng::stream(cfg.seed, "contrastive.dropout");
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut report = ContrastiveReport::default();
    let mut steps = 0usize;
    let mut epoch = 0;
    // `max_steps`, when set, governs the run length instead of `epochs`.
    while cfg.max_steps.map_or(epoch < cfg.epochs, |m| steps < m) {
        order.shuffle(&mut shuffle);
        for idx in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            if idx.len() < 2 {
                report.skipped_batches += 1;
                continue;
            }
            let seqs: Vec<BehaviorSequence> = idx.iter().map(|&i| data[i].clone()).collect();
            let mut g = Graph::new();
            let (v, vp) = two_views(&mut g, model, &seqs, &mut dropout)?;
            let loss = infonce_loss(&mut g, v, vp, cfg.temperature)?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step: steps });
            }
            let mut grads = g.backward(loss)?;
            if let Some(c) = cfg.grad_clip {
                grads.clip_norm(c);
            }
            adam.step(&mut model.params, &grads, |_| 1.0)?;
            report.losses.push(value);
            steps += 1;
        }
        epoch += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, GeneratorConfig};
    use crate::model::ModelConfig;

    fn setup(dropout: f64) -> (Model<f32>, Vec<BehaviorSequence>) {
        let gen = GeneratorConfig {
            n_users: 24,
            min_len: 8,
            max_len: 12,
            seed: 8,
            ..GeneratorConfig::default()
        };
        let corpus = generate_corpus(&gen).unwrap();
        let cfg = ModelConfig::new(gen.vocab().cardinalities(), 18, 1, 2, 13, dropout, 2).unwrap();
        (Model::init(cfg).unwrap(), corpus)
    }

    #[test]
    fn eval_embedding_is_deterministic() {
        let (m, c) = setup(0.1);
        let mut r = rng::stream(0, "a");
        let a = embed_sequence(&m, &c[0], Mode::Eval, &mut r).unwrap();
        let b = embed_sequence(&m, &c[0], Mode::Eval, &mut r).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 18);
    }

    #[test]
    fn train_views_differ() {
        let (m, c) = setup(0.1);
        let a = embed_sequence(&m, &c[0], Mode::Train, &mut rng::stream(1, "a")).unwrap();
        let b = embed_sequence(&m, &c[0], Mode::Train, &mut rng::stream(2, "a")).unwrap();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let cos = dot
            / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
                * b.iter().map(|x| x * x).sum::<f64>().sqrt());
        assert!(cos < 1.0 - 1e-9, "{cos}");
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let (m, c) = setup(0.0);
        let a = embed_sequence(&m, &c[3], Mode::Train, &mut rng::stream(1, "a")).unwrap();
        let b = embed_sequence(&m, &c[3], Mode::Eval, &mut rng::stream(1, "a")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_dropout_rejected() {
        let (mut m, c) = setup(0.0);
        let err = finetune_contrastive(&mut m, &c, &ContrastiveConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn trailing_singleton_batch_skipped() {
        let (mut m, c) = setup(0.1);
        let cfg = ContrastiveConfig {
            batch_size: 23,
            ..ContrastiveConfig::default()
        };
        let rep = finetune_contrastive(&mut m, &c, &cfg).unwrap();
        assert_eq!(rep.losses.len(), 1);
        assert_eq!(rep.skipped_batches, 1);
    }

    #[test]
    fn corpus_embeddings_match_single() {
        let (m, c) = setup(0.1);
        let all = embed_corpus(&m, &c).unwrap();
        let one = embed_sequence(&m, &c[5], Mode::Eval, &mut rng::stream(0, "x")).unwrap();
        for (a, b) in all[5].iter().zip(&one) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

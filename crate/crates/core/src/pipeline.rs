//! End-to-end desk-scale run: generate → pretrain → few-shot SFT → score
//! → evaluate, with the pass/fail thresholds of the smoke test.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{generate_corpus, BehaviorSequence};
use crate::error::{Error, Result};
use crate::eval::{entries_from_scores, roc_auc, topk_rank_metrics, RankReport};
use crate::model::Model;
use crate::pretrain::{evaluate_loss, pretrain};
use crate::rng;
use crate::sft::{finetune_sft, score_users};

pub const MAX_LOSS_RATIO: f64 = 0.8;
pub const MIN_AUC: f64 = 0.90;
pub const MIN_TOP1_LIFT: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmokeReport {
    pub n_train: usize,
    pub n_holdout: usize,
    pub holdout_positives: usize,
    pub pretrain_steps: usize,
    pub loss_initial: f64,
    pub loss_final: f64,
    pub sft_positives: usize,
    pub auc: f64,
    pub ranking: RankReport,
    pub criteria: Vec<Criterion>,
    #[serde(skip)]
    pub stage_seconds: Vec<(String, f64)>,
}

impl SmokeReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

/// The desk-scale smoke configuration: 10,000 users of exactly 32 events,
/// 1% planted fraud, 2,000 held out, 50 training positives.
pub fn smoke_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.data.n_users = 10_000;
    c.data.fraud_fraction = 0.01;
    c.data.min_len = 32;
    c.data.max_len = 32;
    c.model.max_events = 32;
    c.pretrain.steps = 600;
    c.pretrain.batch_size = 32;
    c.pretrain.window = 32;
    c.pretrain.lr = 2e-3;
    c.sft.max_positives = Some(50);
    c.sft.epochs = 1;
    c.sft.max_steps = Some(250);
    c.eval.holdout_users = 2000;
    c.with_seed(seed)
}

fn stage<T>(
    name: &str,
    times: &mut Vec<(String, f64)>,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let t = Instant::now();
    let out = f().map_err(|e| Error::Validation(format!("stage {name} failed: {e}")))?;
    times.push((name.to_string(), t.elapsed().as_secs_f64()));
    Ok(out)
}

/// Seeded train/holdout split of the corpus.
pub fn split_holdout(
    corpus: Vec<BehaviorSequence>,
    holdout: usize,
    seed: u64,
) -> Result<(Vec<BehaviorSequence>, Vec<BehaviorSequence>)> {
    if holdout == 0 || holdout >= corpus.len() {
        return Err(Error::Config(format!(
            "holdout of {holdout} users needs a corpus larger than it (have {})",
            corpus.len()
        )));
    }
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(&mut rng::stream(seed, "holdout"));
    let mut is_holdout = vec![false; corpus.len()];
    for &i in &idx[..holdout] {
        is_holdout[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, h) in corpus.into_iter().zip(is_holdout) {
        if h {
            test.push(s);
        } else {
            train.push(s);
        }
    }
    Ok((train, test))
}

pub fn pipeline_smoke(cfg: &RunConfig) -> Result<SmokeReport> {
    cfg.validate()?;
    let mut times = Vec::new();
    let corpus = stage("gen-data", &mut times, || generate_corpus(&cfg.data))?;
    let (train, holdout) = split_holdout(corpus, cfg.eval.holdout_users, cfg.seed)?;
    let mut model: Model<f32> = Model::init(cfg.model_config(&cfg.data.vocab())?)?;
    let loss_initial = evaluate_loss(&model, &holdout, 64)?;
    let report = stage("pretrain", &mut times, || {
        pretrain(&mut model, &train, &cfg.pretrain)
    })?;
    let loss_final = evaluate_loss(&model, &holdout, 64)?;
    let (tuned, _) = stage("finetune-sft", &mut times, || {
        finetune_sft(&model, &train, &cfg.sft)
    })?;
    let scores = stage("score", &mut times, || score_users(&tuned, &holdout))?;
    let (auc, ranking) = stage("eval", &mut times, || {
        let entries = entries_from_scores(&scores, &holdout)?;
        Ok((roc_auc(&entries)?, topk_rank_metrics(&entries, &[0.01])?))
    })?;
    let holdout_positives = ranking.positives;
    let base = holdout_positives as f64 / holdout.len() as f64;
    let top1 = ranking.rows[0].precision / 100.0;
    let ratio = loss_final / loss_initial;
    let sft_positives = train
        .iter()
        .filter(|s| s.is_fraud())
        .count()
        .min(cfg.sft.max_positives.unwrap_or(usize::MAX));
    let criteria = vec![
        Criterion {
            name: "pretrain loss ratio".into(),
            passed: ratio <= MAX_LOSS_RATIO,
            detail: format!(
                "{loss_final:.4}/{loss_initial:.4} = {ratio:.3} (need <= {MAX_LOSS_RATIO})"
            ),
        },
        Criterion {
            name: "holdout ROC-AUC".into(),
            passed: auc >= MIN_AUC,
            detail: format!("{auc:.4} (need >= {MIN_AUC})"),
        },
        Criterion {
            name: "top-1% precision lift".into(),
            passed: top1 >= MIN_TOP1_LIFT * base,
            detail: format!(
                "{:.4} vs base {:.4}: {:.1}x (need >= {MIN_TOP1_LIFT}x)",
                top1,
                base,
                top1 / base
            ),
        },
    ];
    Ok(SmokeReport {
        n_train: train.len(),
        n_holdout: holdout.len(),
        holdout_positives,
        pretrain_steps: report.losses.len(),
        loss_initial,
        loss_final,
        sft_positives,
        auc,
        ranking,
        criteria,
        stage_seconds: times,
    })
}

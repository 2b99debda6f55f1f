use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use fraudformer::checkpoint::{self, CheckpointMeta};
use fraudformer::config::RunConfig;
use fraudformer::contrastive::{embed_corpus, finetune_contrastive};
use fraudformer::data::{
    generate_corpus, read_jsonl, read_vocab, vocab_sidecar_path, write_jsonl, write_vocab,
};
use fraudformer::eval::{entries_from_scores, per_class_metrics, roc_auc, topk_rank_metrics};
use fraudformer::gradcheck::{run_suite, GradcheckConfig};
use fraudformer::pipeline::{pipeline_smoke, smoke_config};
use fraudformer::pretrain::pretrain as run_pretrain;
use fraudformer::sft::{class_target, finetune_sft as run_sft, predict_classes, score_users};
use fraudformer::{BehaviorSequence, Model, Scalar, VocabSpec};

use crate::files::{
    read_scores, sibling, write_embeddings, write_losses, write_metrics, write_scores,
};
use crate::{Common, Precision};

pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FRAUDFORMER_THREADS") {
        let n: usize = v.parse().with_context(|| {
            format!("FRAUDFORMER_THREADS must be a positive integer, got {v:?}")
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    let seed = common.seed.unwrap_or(cfg.seed);
    let cfg = cfg.with_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(path: &Path) -> Result<(VocabSpec, Vec<BehaviorSequence>)> {
    let sidecar = vocab_sidecar_path(path);
    let vocab = read_vocab(&sidecar)
        .with_context(|| format!("reading vocabulary {}", sidecar.display()))?;
    let corpus = read_jsonl(path, &vocab).with_context(|| format!("reading {}", path.display()))?;
    Ok((vocab, corpus))
}

fn load_model<S: Scalar>(path: &Path, vocab: &VocabSpec) -> Result<(Model<S>, CheckpointMeta)> {
    let (model, meta) = checkpoint::load::<S>(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    checkpoint::check_vocab(&model.config, vocab)?;
    Ok((model, meta))
}

pub fn gen_data(common: &Common, out: &Path) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let corpus = generate_corpus(&cfg.data)?;
    write_jsonl(out, &corpus)?;
    write_vocab(&vocab_sidecar_path(out), &cfg.data.vocab())?;
    let fraud = corpus.iter().filter(|s| s.is_fraud()).count();
    println!(
        "wrote {} users ({fraud} fraud) to {}",
        corpus.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn pretrain_as<S: Scalar>(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let (vocab, corpus) = load_data(data)?;
    let mut model = Model::<S>::init(cfg.model_config(&vocab)?)?;
    let report = run_pretrain(&mut model, &corpus, &cfg.pretrain)?;
    let meta = CheckpointMeta {
        stage: "pretrain".into(),
        steps: report.losses.len(),
        seed: cfg.seed,
    };
    checkpoint::save(out, &model, &meta)?;
    let losses = sibling(out, "loss.csv");
    write_losses(&losses, &report.losses)?;
    if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
        println!(
            "pretrained {} steps: loss {first:.4} -> {last:.4}",
            report.losses.len()
        );
    }
    println!("wrote {} and {}", out.display(), losses.display());
    Ok(())
}

pub fn pretrain(common: &Common, data: &Path, out: &Path) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    match common.mode {
        Precision::F32 => pretrain_as::<f32>(&cfg, data, out)?,
        Precision::F64 => pretrain_as::<f64>(&cfg, data, out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn sft_as<S: Scalar>(cfg: &RunConfig, ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let (vocab, corpus) = load_data(data)?;
    let (backbone, _) = load_model::<S>(ckpt, &vocab)?;
    let (model, metrics) = run_sft(&backbone, &corpus, &cfg.sft)?;
    let meta = CheckpointMeta {
        stage: "finetune-sft".into(),
        steps: metrics.last().map_or(0, |m| m.steps),
        seed: cfg.seed,
    };
    checkpoint::save(out, &model, &meta)?;
    let path = sibling(out, "metrics.csv");
    write_metrics(&path, &metrics)?;
    for m in &metrics {
        println!(
            "epoch {} (step {}): loss {:.4}, train accuracy {:.3}",
            m.epoch, m.steps, m.loss, m.accuracy
        );
    }
    println!("wrote {} and {}", out.display(), path.display());
    Ok(())
}

pub fn finetune_sft(common: &Common, ckpt: &Path, data: &Path, out: &Path) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    match common.mode {
        Precision::F32 => sft_as::<f32>(&cfg, ckpt, data, out)?,
        Precision::F64 => sft_as::<f64>(&cfg, ckpt, data, out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cl_as<S: Scalar>(
    cfg: &RunConfig,
    ckpt: &Path,
    data: &Path,
    out: &Path,
    emb: Option<&Path>,
) -> Result<()> {
    let (vocab, corpus) = load_data(data)?;
    let (mut model, _) = load_model::<S>(ckpt, &vocab)?;
    let report = finetune_contrastive(&mut model, &corpus, &cfg.contrastive)?;
    if report.skipped_batches > 0 {
        eprintln!(
            "warning: skipped {} batch(es) with fewer than two sequences",
            report.skipped_batches
        );
    }
    let meta = CheckpointMeta {
        stage: "finetune-cl".into(),
        steps: report.losses.len(),
        seed: cfg.seed,
    };
    checkpoint::save(out, &model, &meta)?;
    let path = sibling(out, "loss.csv");
    write_losses(&path, &report.losses)?;
    println!("wrote {} and {}", out.display(), path.display());
    if let Some(emb) = emb {
        let rows = embed_corpus(&model, &corpus)?;
        let ids: Vec<&str> = corpus.iter().map(|s| s.user_id.as_str()).collect();
        write_embeddings(emb, &ids, &rows)?;
        println!("wrote {}", emb.display());
    }
    Ok(())
}

pub fn finetune_cl(
    common: &Common,
    ckpt: &Path,
    data: &Path,
    out: &Path,
    emb: Option<&Path>,
) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    match common.mode {
        Precision::F32 => cl_as::<f32>(&cfg, ckpt, data, out, emb)?,
        Precision::F64 => cl_as::<f64>(&cfg, ckpt, data, out, emb)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn score_as<S: Scalar>(ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let (vocab, corpus) = load_data(data)?;
    let (model, _) = load_model::<S>(ckpt, &vocab)?;
    let scores = score_users(&model, &corpus)?;
    write_scores(out, &scores)?;
    println!("scored {} users into {}", scores.len(), out.display());
    Ok(())
}

pub fn score(common: &Common, ckpt: &Path, data: &Path, out: &Path) -> Result<ExitCode> {
    match common.mode {
        Precision::F32 => score_as::<f32>(ckpt, data, out)?,
        Precision::F64 => score_as::<f64>(ckpt, data, out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn emit(out: Option<&Path>, text: &str, csv: &str) -> Result<()> {
    print!("{text}");
    if let Some(out) = out {
        let (t, c) = (sibling(out, "txt"), sibling(out, "csv"));
        std::fs::write(&t, text).with_context(|| format!("writing {}", t.display()))?;
        std::fs::write(&c, csv).with_context(|| format!("writing {}", c.display()))?;
    }
    Ok(())
}

pub fn eval(
    common: &Common,
    data: &Path,
    scores: Option<&Path>,
    ckpt: Option<&Path>,
    k: Option<Vec<f64>>,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let (vocab, corpus) = load_data(data)?;
    if let Some(path) = scores {
        let scores = read_scores(path)?;
        let entries = entries_from_scores(&scores, &corpus)?;
        let ks = k.unwrap_or(cfg.eval.k_fractions);
        let report = topk_rank_metrics(&entries, &ks)?;
        emit(out, &report.to_text(), &report.to_csv())?;
        println!("N = {}, positives = {}", report.n, report.positives);
        match roc_auc(&entries) {
            Ok(auc) => println!("ROC-AUC = {auc:.4}"),
            Err(e) => println!("ROC-AUC = — ({e})"),
        }
        if !report.is_consistent() {
            bail!("ranked report violates precision·cut = recall·P");
        }
        return Ok(ExitCode::SUCCESS);
    }
    let ckpt = ckpt.expect("clap requires --scores or --checkpoint");
    let (model, _) = load_model::<f32>(ckpt, &vocab)?;
    let n_classes = model
        .head
        .as_ref()
        .map(|h| h.n_classes)
        .context("checkpoint has no anomaly head")?;
    let preds = predict_classes(&model, &corpus)?;
    let labels = corpus
        .iter()
        .map(|s| class_target(s.label, n_classes))
        .collect::<fraudformer::Result<Vec<_>>>()?;
    let report = per_class_metrics(&preds, &labels, n_classes)?;
    emit(out, &report.to_text(), &report.to_csv())?;
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(seed: u64) -> Result<ExitCode> {
    let start = Instant::now();
    let cfg = GradcheckConfig {
        seed,
        ..GradcheckConfig::default()
    };
    let checks = run_suite(&cfg)?;
    let mut ok = true;
    for c in &checks {
        println!(
            "{:<4} {:<22} probes {:>3}  max rel err {:.3e}",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.probes,
            c.max_rel_error
        );
        ok &= c.passed;
    }
    println!(
        "{} of {} checks passed in {:.2}s (tolerance {:e})",
        checks.iter().filter(|c| c.passed).count(),
        checks.len(),
        start.elapsed().as_secs_f64(),
        cfg.tolerance
    );
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

pub fn smoke(config: Option<&Path>, seed: Option<u64>) -> Result<ExitCode> {
    let cfg = match config {
        Some(p) => {
            let c =
                RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?;
            let s = seed.unwrap_or(c.seed);
            c.with_seed(s)
        }
        None => smoke_config(seed.unwrap_or(0)),
    };
    let start = Instant::now();
    let report = pipeline_smoke(&cfg)?;
    for (stage, secs) in &report.stage_seconds {
        println!("stage {stage:<13} {secs:>8.2}s");
    }
    println!(
        "train {} / holdout {} users ({} positives), {} SFT positives, {} pretrain steps",
        report.n_train,
        report.n_holdout,
        report.holdout_positives,
        report.sft_positives,
        report.pretrain_steps
    );
    print!("{}", report.ranking.to_text());
    for c in &report.criteria {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fraudformer::sft::{EpochMetrics, UserScore};

/// `m.ckpt` → `m.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_losses(path: &Path, losses: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["step", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "steps", "loss", "accuracy"])?;
    for m in metrics {
        w.write_record([
            m.epoch.to_string(),
            m.steps.to_string(),
            m.loss.to_string(),
            m.accuracy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scores(path: &Path, scores: &[UserScore]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["user_id", "score"])?;
    for s in scores {
        w.write_record([s.user_id.as_str(), &s.score.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<UserScore>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["user_id", "score"] {
        bail!("{}: expected header user_id,score", path.display());
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{} line {}", path.display(), i + 2))?;
        let score: f64 = rec[1].parse().with_context(|| {
            format!("{} line {}: bad score {:?}", path.display(), i + 2, &rec[1])
        })?;
        out.push(UserScore {
            user_id: rec[0].to_string(),
            score,
        });
    }
    Ok(out)
}

pub fn write_embeddings(path: &Path, ids: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = writer(path)?;
    let d = rows.first().map_or(0, Vec::len);
    let mut header = vec!["user_id".to_string()];
    header.extend((0..d).map(|j| format!("e{j}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(rows) {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

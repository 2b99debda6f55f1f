use std::collections::HashMap;

use serde::Serialize;

use super::{aligned, csv_field};
use crate::data::BehaviorSequence;
use crate::error::{Error, Result};
use crate::sft::UserScore;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankEntry {
    pub user_id: String,
    pub score: f64,
    pub positive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopKRow {
    pub k: f64,
    pub cut: usize,
    pub hits: usize,
    /// Percent.
    pub precision: f64,
    /// Percent.
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankReport {
    pub n: usize,
    pub positives: usize,
    pub rows: Vec<TopKRow>,
}

/// Joins scores with corpus labels by user id.
pub fn entries_from_scores(
    scores: &[UserScore],
    corpus: &[BehaviorSequence],
) -> Result<Vec<RankEntry>> {
    let labels: HashMap<&str, bool> = corpus
        .iter()
        .map(|s| (s.user_id.as_str(), s.is_fraud()))
        .collect();
    scores
        .iter()
        .map(|s| {
            let positive = *labels.get(s.user_id.as_str()).ok_or_else(|| {
                Error::Validation(format!("scored user {} not in the labeled data", s.user_id))
            })?;
            Ok(RankEntry {
                user_id: s.user_id.clone(),
                score: s.score,
                positive,
            })
        })
        .collect()
}

fn check_scores(entries: &[RankEntry]) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::Validation("no ranked entries".into()));
    }
    if let Some(e) = entries.iter().find(|e| !e.score.is_finite()) {
        return Err(Error::Validation(format!(
            "user {} has non-finite score {}",
            e.user_id, e.score
        )));
    }
    Ok(())
}

/// Descending score, ascending user id on ties.
fn ranked(entries: &[RankEntry]) -> Vec<&RankEntry> {
    let mut r: Vec<&RankEntry> = entries.iter().collect();
    r.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.user_id.cmp(&b.user_id))
    });
    r
}

pub fn topk_rank_metrics(entries: &[RankEntry], k_fractions: &[f64]) -> Result<RankReport> {
    check_scores(entries)?;
    let n = entries.len();
    let positives = entries.iter().filter(|e| e.positive).count();
    if positives == 0 {
        return Err(Error::Undefined(
            "recall is undefined without positives".into(),
        ));
    }
    let order = ranked(entries);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for e in &order {
        prefix.push(prefix.last().unwrap() + usize::from(e.positive));
    }
    let rows = k_fractions
        .iter()
        .map(|&k| {
            if !(k > 0.0 && k <= 1.0) {
                return Err(Error::Validation(format!("k fraction {k} outside (0,1]")));
            }
            // Guard against k·N landing a hair above an integer.
            let cut = ((k * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
            let hits = prefix[cut];
            Ok(TopKRow {
                k,
                cut,
                hits,
                precision: 100.0 * hits as f64 / cut as f64,
                recall: 100.0 * hits as f64 / positives as f64,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RankReport { n, positives, rows })
}

/// `k` as a percentage label: 0.01 → "1", 0.0001 → "0.01".
fn k_label(k: f64) -> String {
    let s = format!("{:.8}", k * 100.0);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

const HEADER: [&str; 3] = ["Rank", "Precision (%)", "Recall (%)"];

impl RankReport {
    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    format!("Top {}%", k_label(r.k)),
                    format!("{:.4}", r.precision),
                    format!("{:.2}", r.recall),
                ]
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        aligned(&HEADER, &self.cells())
    }

    pub fn to_csv(&self) -> String {
        let mut out = HEADER.join(",") + "\n";
        for r in self.cells() {
            out.push_str(&r.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    /// Every row satisfies `precision·cut = recall·P` (both are the hit
    /// count) to floating-point accuracy.
    pub fn is_consistent(&self) -> bool {
        self.rows.iter().all(|r| {
            let a = r.precision * r.cut as f64;
            let b = r.recall * self.positives as f64;
            (a - b).abs() <= 1e-9 * a.abs().max(1.0)
        })
    }
}

/// Precision (percent) implied by a recall (percent) at fraction `k` of
/// `n` items holding `positives`: `recall·P/(k·N)`.
pub fn implied_precision(recall_pct: f64, positives: f64, k: f64, n: f64) -> f64 {
    recall_pct * positives / (k * n)
}

/// Whether `reported` (given to `decimals` places) is within one unit of
/// its last digit of `implied`.
pub fn consistent_within_rounding(reported: f64, implied: f64, decimals: i32) -> bool {
    let unit = 10f64.powi(-decimals);
    let rounded = (implied / unit).round() * unit;
    (reported - rounded).abs() <= unit * (1.0 + 1e-9)
}

/// Probability a random positive outscores a random negative, ties ½
/// (Mann–Whitney with average ranks).
pub fn roc_auc(entries: &[RankEntry]) -> Result<f64> {
    check_scores(entries)?;
    let p = entries.iter().filter(|e| e.positive).count();
    let q = entries.len() - p;
    if p == 0 || q == 0 {
        return Err(Error::Undefined("ROC-AUC needs both classes".into()));
    }
    let mut sorted: Vec<&RankEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].score == sorted[i].score {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let avg = (i + j + 2) as f64 / 2.0;
        let pos = sorted[i..=j].iter().filter(|e| e.positive).count();
        rank_sum += avg * pos as f64;
        i = j + 1;
    }
    let u = rank_sum - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p as f64 * q as f64))
}

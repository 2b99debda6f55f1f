//! JSON Lines corpus files and the vocabulary sidecar.
//!
//! One sequence per line:
//! `{"user_id": str, "attrs": [[int; D]; T], "label": int, "anomaly_onset": int|null}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BehaviorEvent, BehaviorSequence, VocabSpec};
use crate::error::{Error, Result};

#[derive(Serialize)]
struct LineOut<'a> {
    user_id: &'a str,
    attrs: Vec<&'a [u32]>,
    label: u32,
    anomaly_onset: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LineIn {
    user_id: String,
    attrs: Vec<Vec<u32>>,
    label: u32,
    anomaly_onset: Option<usize>,
}

/// `data.jsonl` → `data.vocab.json`.
pub fn vocab_sidecar_path(corpus: &Path) -> PathBuf {
    corpus.with_extension("vocab.json")
}

pub fn write_vocab(path: &Path, vocab: &VocabSpec) -> Result<()> {
    let mut s = serde_json::to_string_pretty(vocab)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_vocab(path: &Path) -> Result<VocabSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: VocabSpec = serde_json::from_str(&text)?;
    v.validate()?;
    Ok(v)
}

pub fn write_jsonl(path: &Path, corpus: &[BehaviorSequence]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for seq in corpus {
        let line = LineOut {
            user_id: &seq.user_id,
            attrs: seq.events.iter().map(|e| e.attrs.as_slice()).collect(),
            label: seq.label,
            anomaly_onset: seq.anomaly_onset,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates every line against `vocab`. Errors carry the
/// 1-based line number.
pub fn read_jsonl(path: &Path, vocab: &VocabSpec) -> Result<Vec<BehaviorSequence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: LineIn = serde_json::from_str(&line).map_err(|e| Error::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        let seq = BehaviorSequence {
            user_id: raw.user_id,
            events: raw.attrs.into_iter().map(BehaviorEvent::new).collect(),
            label: raw.label,
            anomaly_onset: raw.anomaly_onset,
        };
        seq.validate(vocab).map_err(|e| Error::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(seq);
    }
    Ok(out)
}

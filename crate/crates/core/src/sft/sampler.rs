use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub batch_size: usize,
    /// Fraction of each batch drawn from the positive pool.
    pub positive_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            positive_fraction: 0.25,
        }
    }
}

impl SamplerConfig {
    /// Positives per batch, `round(ρ·batch)`.
    pub fn n_positive(&self) -> usize {
        (self.positive_fraction * self.batch_size as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::Config(format!(
                "positive_fraction must be in (0,1), got {}",
                self.positive_fraction
            )));
        }
        if self.batch_size == 0 || self.n_positive() == 0 {
            return Err(Error::Config(format!(
                "batch of {} with fraction {} holds no positives",
                self.batch_size, self.positive_fraction
            )));
        }
        Ok(())
    }
}

/// Batches with a fixed positive share: positives are drawn with
/// replacement, negatives are read from a shuffled permutation that is
/// reshuffled once exhausted.
#[derive(Clone, Debug)]
pub struct ImbalancedSampler {
    positives: Vec<usize>,
    negatives: Vec<usize>,
    n_pos: usize,
    n_neg: usize,
    cursor: usize,
    epochs: usize,
    rng: SeededRng,
}

impl ImbalancedSampler {
    pub fn new(
        positives: Vec<usize>,
        negatives: Vec<usize>,
        cfg: &SamplerConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if positives.is_empty() {
            return Err(Error::Config("no positive examples to oversample".into()));
        }
        let n_pos = cfg.n_positive().min(cfg.batch_size);
        let n_neg = cfg.batch_size - n_pos;
        if n_neg > 0 && negatives.is_empty() {
            return Err(Error::Config("no negative examples".into()));
        }
        let mut rng = rng::stream(seed, "sft.sampler");
        let mut negatives = negatives;
        negatives.shuffle(&mut rng);
        Ok(Self {
            positives,
            negatives,
            n_pos,
            n_neg,
            cursor: 0,
            epochs: 0,
            rng,
        })
    }

    /// Number of complete passes over the negative pool so far.
    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// Batches per negative pass.
    pub fn batches_per_epoch(&self) -> usize {
        if self.n_neg == 0 {
            self.positives.len().div_ceil(self.n_pos).max(1)
        } else {
            self.negatives.len().div_ceil(self.n_neg)
        }
    }

    /// Returns `(positives, negatives)` index lists of the next batch.
    pub fn next_batch(&mut self) -> (Vec<usize>, Vec<usize>) {
        let pos: Vec<usize> = (0..self.n_pos)
            .map(|_| self.positives[self.rng.random_range(0..self.positives.len())])
            .collect();
        let mut neg = Vec::with_capacity(self.n_neg);
        while neg.len() < self.n_neg {
            neg.push(self.negatives[self.cursor]);
            self.cursor += 1;
            if self.cursor == self.negatives.len() {
                self.negatives.shuffle(&mut self.rng);
                self.cursor = 0;
                self.epochs += 1;
            }
        }
        if self.n_neg == 0 {
            self.cursor += self.n_pos;
            if self.cursor >= self.positives.len() {
                self.cursor = 0;
                self.epochs += 1;
            }
        }
        (pos, neg)
    }
}

//! JSON run configuration. Every section has defaults and rejects unknown
//! keys; the single global seed fans out to per-stage streams.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contrastive::ContrastiveConfig;
use crate::data::{GeneratorConfig, VocabSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::pretrain::PretrainConfig;
use crate::rng::derive_seed;
use crate::sft::SftConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Longest event sequence the position table covers.
    pub max_events: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            max_events: 64,
            dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub k_fractions: Vec<f64>,
    /// Users held out from fine-tuning for scoring.
    pub holdout_users: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            k_fractions: vec![0.01, 0.001, 0.0001],
            holdout_users: 2000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: GeneratorConfig,
    pub model: ModelSection,
    pub pretrain: PretrainConfig,
    pub sft: SftConfig,
    pub contrastive: ContrastiveConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.reseed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets the global seed and every stage seed derived from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.seed = derive_seed(seed, "data");
        self.pretrain.seed = derive_seed(seed, "pretrain");
        self.sft.seed = derive_seed(seed, "sft");
        self.contrastive.seed = derive_seed(seed, "contrastive");
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.reseed(seed);
        self
    }

    /// Backbone configuration for `vocab`.
    pub fn model_config(&self, vocab: &VocabSpec) -> Result<ModelConfig> {
        let m = &self.model;
        ModelConfig::new(
            vocab.cardinalities(),
            m.d_model,
            m.n_layers,
            m.n_heads,
            m.max_events + 1,
            m.dropout,
            derive_seed(self.seed, "model"),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model_config(&self.data.vocab())?;
        self.sft.validate()?;
        if self
            .eval
            .k_fractions
            .iter()
            .any(|&k| !(k > 0.0 && k <= 1.0))
        {
            return Err(Error::Config("k fractions must lie in (0,1]".into()));
        }
        Ok(())
    }
}

//! Autoregressive pretraining of multivariate behavior sequences with
//! supervised (differential-convolutional) and contrastive fine-tuning,
//! plus the synthetic data generator and ranking/classification metrics
//! used to evaluate them.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense tensors, a reverse-mode gradient tape and Adam.
//! - [`data`]: vocabularies, sequences, tokenization, sampling, JSONL I/O
//!   and the synthetic corpus generator.
//! - [`pretrain`]: the causal model with concatenated per-attribute
//!   embeddings and weight-tied per-attribute decoding.
//! - [`sft`]: differencing, the convolutional anomaly head, imbalanced
//!   sampling and user scoring.
//! - [`contrastive`]: dropout views, cosine similarity and InfoNCE.
//! - [`eval`]: per-class and top-k ranking reports, ROC-AUC.
//! - [`checkpoint`], [`config`], [`pipeline`]: persistence, run
//!   configuration and the end-to-end smoke pipeline.

pub mod checkpoint;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod pretrain;
pub mod rng;
pub mod sft;

pub use data::{BehaviorEvent, BehaviorSequence, VocabSpec};
pub use error::{Error, Result};
pub use model::{Model, ModelConfig, ParamGroup, ParamId, ParamStore};
pub use numerics::{Graph, Mode, Scalar, Tensor, Var};

//! Causal pretraining: concatenated per-attribute embeddings, masked
//! self-attention blocks and weight-tied per-attribute reconstruction.
//!
//! Each sequence is laid out as `[BOS, e_1, …, e_T]` (padded on the right
//! to the batch maximum). The hidden state at position `p` predicts event
//! `p + 1`, so every real event is a target and the final position is not.

mod batch;
mod forward;
mod train;

pub use batch::EventBatch;
pub use forward::{
    attribute_embeddings, causal_forward, embed_concat, forward_hidden, forward_loss,
    reconstruct_logits, reconstruction_loss, reconstruction_targets,
};
pub use train::{evaluate_loss, pretrain, uniform_loss, PretrainConfig, PretrainReport};

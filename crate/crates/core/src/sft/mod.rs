//! Supervised fine-tuning for anomaly detection.
//!
//! The backbone's hidden sequence is differenced over time, passed through
//! a multi-scale convolutional perception layer with global max-pooling,
//! and classified by a small MLP. Scarce positives are oversampled with
//! replacement while negatives are swept without replacement.

mod finetune;
mod head;
mod sampler;

pub use finetune::{
    class_target, finetune_sft, predict_classes, recent_events, score_users, sft_logits,
    EpochMetrics, SftConfig, UserScore,
};
pub use head::{anomaly_features, anomaly_head, diff_op, head_logits, AnomalyHeadConfig};
pub use sampler::{ImbalancedSampler, SamplerConfig};

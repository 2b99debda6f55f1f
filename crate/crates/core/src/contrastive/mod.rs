//! Contrastive fine-tuning with dropout-generated views.
//!
//! Each sequence is embedded twice in train mode; the two dropout masks
//! make the views differ, and InfoNCE pulls each pair together against the
//! other first views of the batch.

mod loss;
mod retrieval;
mod train;

pub use loss::{cosine_matrix, infonce_loss};
pub use retrieval::{fraud_retrieval, RetrievalReport};
pub use train::{
    embed_corpus, embed_sequence, embed_sequences, evaluate_contrastive, finetune_contrastive,
    ContrastiveConfig, ContrastiveEval, ContrastiveReport,
};

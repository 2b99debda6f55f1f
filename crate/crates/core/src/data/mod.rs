//! Behavior-sequence data model, tokenization, sampling, dataset files
//! and the synthetic corpus generator.

mod generator;
mod jsonl;
mod sequence;
mod tokenize;
mod vocab;
mod window;

pub use generator::{generate_corpus, FraudClass, Generator, GeneratorConfig};
pub use jsonl::{read_jsonl, read_vocab, vocab_sidecar_path, write_jsonl, write_vocab};
pub use sequence::{BehaviorEvent, BehaviorSequence, MAX_SEQUENCE_LEN, N_LABELS};
pub use tokenize::{bucketize_amount, bucketize_gap};
pub use vocab::{DimSpec, VocabSpec, PAD};
pub use window::window_sample;

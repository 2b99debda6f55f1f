use crate::data::{BehaviorSequence, PAD};
use crate::error::{Error, Result};

/// Right-padded token ids of several sequences, `[batch, max_len, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventBatch {
    lengths: Vec<usize>,
    max_len: usize,
    n_dims: usize,
    ids: Vec<u32>,
}

impl EventBatch {
    pub fn from_sequences<'a, I>(seqs: I, n_dims: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a BehaviorSequence>,
    {
        let seqs: Vec<&BehaviorSequence> = seqs.into_iter().collect();
        if seqs.is_empty() {
            return Err(Error::Parameter("empty batch".into()));
        }
        let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        if lengths.contains(&0) {
            return Err(Error::Validation("batch contains an empty sequence".into()));
        }
        let max_len = *lengths.iter().max().expect("nonempty");
        let mut ids = vec![PAD; seqs.len() * max_len * n_dims];
        for (b, s) in seqs.iter().enumerate() {
            for (t, e) in s.events.iter().enumerate() {
                if e.attrs.len() != n_dims {
                    return Err(Error::Schema(format!(
                        "user {}: event {t} has {} attributes, model expects {n_dims}",
                        s.user_id,
                        e.attrs.len()
                    )));
                }
                let base = (b * max_len + t) * n_dims;
                ids[base..base + n_dims].copy_from_slice(&e.attrs);
            }
        }
        Ok(Self {
            lengths,
            max_len,
            n_dims,
            ids,
        })
    }

    /// Builds a batch directly from `[T, D]` id rows of one sequence.
    pub fn from_ids(rows: &[Vec<u32>]) -> Result<Self> {
        let n_dims = rows.first().map_or(0, Vec::len);
        let seq = BehaviorSequence {
            user_id: String::new(),
            events: rows
                .iter()
                .cloned()
                .map(crate::data::BehaviorEvent::new)
                .collect(),
            label: 0,
            anomaly_onset: None,
        };
        Self::from_sequences([&seq], n_dims)
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Rows per sequence in the model layout (BOS + events).
    pub fn seq_rows(&self) -> usize {
        self.max_len + 1
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn id(&self, b: usize, t: usize, d: usize) -> u32 {
        self.ids[(b * self.max_len + t) * self.n_dims + d]
    }

    /// Ids of attribute `d` for every (sequence, event) slot, row-major.
    pub fn column(&self, d: usize) -> Vec<usize> {
        self.ids
            .iter()
            .skip(d)
            .step_by(self.n_dims)
            .map(|&v| v as usize)
            .collect()
    }

    /// Number of real (non-PAD) events in the batch.
    pub fn n_events(&self) -> usize {
        self.lengths.iter().sum()
    }
}

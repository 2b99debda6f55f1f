use super::vocab::{VocabSpec, PAD};
use crate::error::{Error, Result};

pub const MAX_SEQUENCE_LEN: usize = 4096;

/// Normal plus the eight fraud classes.
pub const N_LABELS: usize = 9;

/// One time step: a token id per attribute dimension.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BehaviorEvent {
    pub attrs: Vec<u32>,
}

impl BehaviorEvent {
    pub fn new(attrs: Vec<u32>) -> Self {
        Self { attrs }
    }
}

/// Ordered events of one user.
///
/// `label` is 0 for Normal (and for unlabeled data); `anomaly_onset` is the
/// index of the first event of a planted fraud regime, when known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BehaviorSequence {
    pub user_id: String,
    pub events: Vec<BehaviorEvent>,
    pub label: u32,
    pub anomaly_onset: Option<usize>,
}

impl BehaviorSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_fraud(&self) -> bool {
        self.label != 0
    }

    /// Checks the sequence against `vocab` and the structural invariants.
    pub fn validate(&self, vocab: &VocabSpec) -> Result<()> {
        if self.events.is_empty() {
            return Err(Error::Schema("sequence has no events".into()));
        }
        if self.events.len() > MAX_SEQUENCE_LEN {
            return Err(Error::Schema(format!(
                "sequence has {} events (max {MAX_SEQUENCE_LEN})",
                self.events.len()
            )));
        }
        if self.label as usize >= N_LABELS {
            return Err(Error::Schema(format!("label {} >= {N_LABELS}", self.label)));
        }
        if let Some(onset) = self.anomaly_onset {
            if onset >= self.events.len() {
                return Err(Error::Schema(format!(
                    "anomaly_onset {onset} outside sequence of length {}",
                    self.events.len()
                )));
            }
            if self.label == 0 {
                return Err(Error::Schema(
                    "anomaly_onset present on a Normal sequence".into(),
                ));
            }
        }
        let d = vocab.len();
        for (t, e) in self.events.iter().enumerate() {
            if e.attrs.len() != d {
                return Err(Error::Schema(format!(
                    "event {t} has {} attributes, vocabulary has {d}",
                    e.attrs.len()
                )));
            }
            for (k, (&id, dim)) in e.attrs.iter().zip(&vocab.dims).enumerate() {
                if id as usize >= dim.cardinality {
                    return Err(Error::Schema(format!(
                        "event {t} attribute {k} (`{}`): id {id} >= cardinality {}",
                        dim.name, dim.cardinality
                    )));
                }
                if id == PAD {
                    return Err(Error::Schema(format!(
                        "event {t} attribute {k} (`{}`) uses the PAD id",
                        dim.name
                    )));
                }
            }
        }
        Ok(())
    }
}

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token id reserved for padding in every dimension.
pub const PAD: u32 = 0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimSpec {
    pub name: String,
    /// Number of ids in this dimension, PAD included.
    pub cardinality: usize,
}

/// Per-attribute vocabularies; the attribute order of every event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSpec {
    pub dims: Vec<DimSpec>,
}

impl VocabSpec {
    pub fn new(dims: Vec<DimSpec>) -> Result<Self> {
        let v = Self { dims };
        v.validate()?;
        Ok(v)
    }

    pub fn from_pairs(pairs: &[(&str, usize)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(name, cardinality)| DimSpec {
                    name: name.to_string(),
                    cardinality,
                })
                .collect(),
        )
    }

    /// The nine-attribute payment schema used by the generator.
    pub fn payment_default() -> Self {
        Self::from_pairs(&[
            ("amount_bucket", 16),
            ("hour_of_day", 25),
            ("day_of_week", 8),
            ("channel", 9),
            ("merchant_category", 33),
            ("device_type", 9),
            ("time_gap_bucket", 17),
            ("region", 17),
            ("action_type", 9),
        ])
        .expect("default schema is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::Schema("vocabulary has no dimensions".into()));
        }
        let mut seen = HashSet::new();
        for d in &self.dims {
            if !seen.insert(d.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate dimension name `{}`",
                    d.name
                )));
            }
            if d.cardinality < 2 {
                return Err(Error::Schema(format!(
                    "dimension `{}` has cardinality {} (< 2)",
                    d.name, d.cardinality
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.dims.iter().map(|d| d.cardinality).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }
}

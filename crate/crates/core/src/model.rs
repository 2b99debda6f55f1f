//! Model configuration and parameter layout.
//!
//! A [`Model`] is what a checkpoint stores: the backbone configuration, an
//! optional anomaly-head configuration, and every parameter by name.
//!
//! Backbone parameters for `D` attributes, width `d`, `L` layers and
//! `T_max` positions:
//!
//! | name                      | shape        |
//! |---------------------------|--------------|
//! | `embed.{k}`               | `[V_k, d_k]` |
//! | `bos`                     | `[1, d]`     |
//! | `pos`                     | `[T_max, d]` |
//! | `layer{l}.ln1.{gamma,beta}` | `[1, d]`   |
//! | `layer{l}.attn.w_qkv`     | `[d, 3d]`    |
//! | `layer{l}.attn.b_qkv`     | `[1, 3d]`    |
//! | `layer{l}.attn.w_o`       | `[d, d]`     |
//! | `layer{l}.attn.b_o`       | `[1, d]`     |
//! | `layer{l}.ln2.{gamma,beta}` | `[1, d]`   |
//! | `layer{l}.mlp.w1`, `b1`   | `[d, 4d]`, `[1, 4d]` |
//! | `layer{l}.mlp.w2`, `b2`   | `[4d, d]`, `[1, d]`  |
//! | `ln_f.{gamma,beta}`       | `[1, d]`     |
//!
//! There is no output projection: attribute `k` is decoded against
//! `embed.{k}` itself. The parameter count is therefore
//!
//! `Σ_k V_k·d_k + d·(T_max + 3) + L·(12d² + 13d)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{init_truncated_normal, Scalar, Tensor};
use crate::rng;
use crate::sft::AnomalyHeadConfig;

pub use crate::numerics::{ParamGroup, ParamId, ParamStore};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Vocabulary size per attribute, PAD included.
    pub cardinalities: Vec<usize>,
    /// Embedding width per attribute; sums to `d_model`.
    pub embed_dims: Vec<usize>,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Positions available, including the begin-of-sequence slot.
    pub t_max: usize,
    pub dropout: f64,
    pub seed: u64,
}

/// Splits `d_model` across attributes in proportion to `ceil(log2 V_k)`,
/// rounding by largest remainder (ties to the lower index). Every
/// attribute receives at least one column.
pub fn allocate_embed_dims(cardinalities: &[usize], d_model: usize) -> Result<Vec<usize>> {
    let n = cardinalities.len();
    if n == 0 || d_model < n {
        return Err(Error::Config(format!(
            "d_model {d_model} cannot be split across {n} attributes"
        )));
    }
    let weights: Vec<f64> = cardinalities
        .iter()
        .map(|&v| (v as f64).log2().ceil().max(1.0))
        .collect();
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| d_model as f64 * w / total).collect();
    let mut dims: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    let left = d_model - dims.iter().sum::<usize>();
    for &i in order.iter().take(left) {
        dims[i] += 1;
    }
    while let Some(zero) = dims.iter().position(|&w| w == 0) {
        let widest = (0..n).rev().max_by_key(|&i| dims[i]).expect("nonempty");
        dims[widest] -= 1;
        dims[zero] = 1;
    }
    Ok(dims)
}

impl ModelConfig {
    pub fn new(
        cardinalities: Vec<usize>,
        d_model: usize,
        n_layers: usize,
        n_heads: usize,
        t_max: usize,
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        let embed_dims = allocate_embed_dims(&cardinalities, d_model)?;
        let cfg = Self {
            cardinalities,
            embed_dims,
            d_model,
            n_layers,
            n_heads,
            t_max,
            dropout,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_dims(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cardinalities.is_empty() || self.cardinalities.iter().any(|&v| v < 2) {
            return Err(Error::Config(
                "every attribute needs cardinality >= 2".into(),
            ));
        }
        if self.embed_dims.len() != self.cardinalities.len()
            || self.embed_dims.contains(&0)
        {
            return Err(Error::Config(
                "one positive embedding width per attribute required".into(),
            ));
        }
        if self.embed_dims.iter().sum::<usize>() != self.d_model {
            return Err(Error::Config(format!(
                "embedding widths sum to {}, d_model is {}",
                self.embed_dims.iter().sum::<usize>(),
                self.d_model
            )));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.t_max < 2 {
            return Err(Error::Config("t_max must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Column offset of attribute `k` inside a `d_model`-wide row.
    pub fn embed_offset(&self, k: usize) -> usize {
        self.embed_dims[..k].iter().sum()
    }

    /// Closed-form backbone parameter count (see the module docs).
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let embed: usize = self
            .cardinalities
            .iter()
            .zip(&self.embed_dims)
            .map(|(v, w)| v * w)
            .sum();
        embed + d * (self.t_max + 3) + self.n_layers * (12 * d * d + 13 * d)
    }

    /// Every backbone parameter name with its shape, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = Vec::new();
        for (k, (&v, &w)) in self.cardinalities.iter().zip(&self.embed_dims).enumerate() {
            out.push((format!("embed.{k}"), vec![v, w]));
        }
        out.push(("bos".into(), vec![1, d]));
        out.push(("pos".into(), vec![self.t_max, d]));
        for l in 0..self.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            out.push((p("ln1.gamma"), vec![1, d]));
            out.push((p("ln1.beta"), vec![1, d]));
            out.push((p("attn.w_qkv"), vec![d, 3 * d]));
            out.push((p("attn.b_qkv"), vec![1, 3 * d]));
            out.push((p("attn.w_o"), vec![d, d]));
            out.push((p("attn.b_o"), vec![1, d]));
            out.push((p("ln2.gamma"), vec![1, d]));
            out.push((p("ln2.beta"), vec![1, d]));
            out.push((p("mlp.w1"), vec![d, 4 * d]));
            out.push((p("mlp.b1"), vec![1, 4 * d]));
            out.push((p("mlp.w2"), vec![4 * d, d]));
            out.push((p("mlp.b2"), vec![1, d]));
        }
        out.push(("ln_f.gamma".into(), vec![1, d]));
        out.push(("ln_f.beta".into(), vec![1, d]));
        out
    }
}

/// How a parameter is initialized, derived from its name.
fn init_kind(name: &str) -> Init {
    if name.ends_with(".gamma") {
        Init::Ones
    } else if name.ends_with(".beta") || name.contains(".b") {
        Init::Zeros
    } else {
        Init::Normal
    }
}

enum Init {
    Ones,
    Zeros,
    Normal,
}

pub(crate) fn init_param<S: Scalar>(
    name: &str,
    shape: &[usize],
    rng: &mut rng::SeededRng,
) -> Tensor<S> {
    match init_kind(name) {
        Init::Ones => Tensor::filled(shape, S::one()),
        Init::Zeros => Tensor::zeros(shape),
        Init::Normal => init_truncated_normal(shape, INIT_STD, rng),
    }
}

/// A backbone with an optional classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub head: Option<AnomalyHeadConfig>,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Model<S> {
    /// Fresh backbone initialized from `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.seed, "init");
        let mut params = ParamStore::new();
        for (name, shape) in config.parameter_shapes() {
            let value = init_param(&name, &shape, &mut rng);
            params.insert(name, value, ParamGroup::Backbone)?;
        }
        Ok(Self {
            config,
            head: None,
            params,
        })
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            head: self.head.clone(),
            params: self.params.cast(),
        }
    }

    /// Every expected parameter name and shape, head included.
    pub fn expected_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = self.config.parameter_shapes();
        if let Some(h) = &self.head {
            shapes.extend(h.parameter_shapes(self.config.d_model));
        }
        shapes
    }

    pub fn param(&self, name: &str) -> Result<ParamId> {
        self.params.id(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_allocation_matches_hand_computation() {
        // ceil(log2 V) = 4,5,3,4,6,4,5,5,4 (sum 40) over 64 columns.
        let dims = allocate_embed_dims(&[16, 25, 8, 9, 33, 9, 17, 17, 9], 64).unwrap();
        assert_eq!(dims.iter().sum::<usize>(), 64);
        assert_eq!(dims, vec![7, 8, 5, 6, 10, 6, 8, 8, 6]);
    }

    #[test]
    fn allocation_gives_every_attribute_a_column() {
        let dims = allocate_embed_dims(&[2, 1000, 2], 4).unwrap();
        assert_eq!(dims.iter().sum::<usize>(), 4);
        assert!(dims.iter().all(|&w| w >= 1));
        assert!(allocate_embed_dims(&[2, 2, 2], 2).is_err());
    }

    #[test]
    fn parameter_count_matches_store() {
        let cfg = ModelConfig::new(vec![16, 25, 8], 12, 2, 3, 9, 0.1, 1).unwrap();
        let m = Model::<f32>::init(cfg.clone()).unwrap();
        assert_eq!(m.params.numel(), cfg.parameter_count());
        assert!(m
            .params
            .iter()
            .all(|(_, p)| !p.name.contains("decode") && !p.name.contains("out_proj")));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(vec![4, 4], 10, 1, 3, 8, 0.0, 0).is_err());
        assert!(ModelConfig::new(vec![4, 4], 8, 1, 2, 1, 0.0, 0).is_err());
        assert!(ModelConfig::new(vec![4, 4], 8, 1, 2, 8, 1.0, 0).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::new(vec![5, 6], 8, 1, 2, 6, 0.0, 9).unwrap();
        let a = Model::<f32>::init(cfg.clone()).unwrap();
        let b = Model::<f32>::init(cfg.clone()).unwrap();
        assert_eq!(a, b);
        let c = Model::<f32>::init(ModelConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.params, c.params);
        assert!(a
            .params
            .by_name("layer0.ln1.gamma")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(a
            .params
            .by_name("layer0.attn.b_qkv")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Graph, Mode, Scalar, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalyHeadConfig {
    pub kernel_sizes: Vec<usize>,
    /// Filters per kernel size.
    pub filters: usize,
    pub hidden: usize,
    /// 2 for binary scoring, 9 for the full label set.
    pub n_classes: usize,
    pub dropout: f64,
}

impl Default for AnomalyHeadConfig {
    fn default() -> Self {
        Self {
            kernel_sizes: vec![2, 3, 5],
            filters: 32,
            hidden: 64,
            n_classes: 2,
            dropout: 0.1,
        }
    }
}

impl AnomalyHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_sizes.is_empty() || self.kernel_sizes.iter().any(|&k| k < 2) {
            return Err(Error::Config(
                "kernel sizes must be non-empty and >= 2".into(),
            ));
        }
        let mut sorted = self.kernel_sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.kernel_sizes.len() {
            return Err(Error::Config("kernel sizes must be distinct".into()));
        }
        if self.filters == 0 || self.hidden == 0 || self.n_classes < 2 {
            return Err(Error::Config(
                "filters, hidden >= 1 and n_classes >= 2 required".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "head dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn max_kernel(&self) -> usize {
        self.kernel_sizes.iter().copied().max().unwrap_or(0)
    }

    /// Minimum number of events a sequence needs for the head: the
    /// differenced sequence must cover the widest kernel.
    pub fn min_events(&self) -> usize {
        self.max_kernel() + 1
    }

    pub fn feature_width(&self) -> usize {
        self.kernel_sizes.len() * self.filters
    }

    pub fn parameter_shapes(&self, d_model: usize) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for &k in &self.kernel_sizes {
            out.push((format!("head.conv{k}.w"), vec![k, d_model, self.filters]));
            out.push((format!("head.conv{k}.b"), vec![1, self.filters]));
        }
        out.push((
            "head.mlp1.w".into(),
            vec![self.feature_width(), self.hidden],
        ));
        out.push(("head.mlp1.b".into(), vec![1, self.hidden]));
        out.push(("head.mlp2.w".into(), vec![self.hidden, self.n_classes]));
        out.push(("head.mlp2.b".into(), vec![1, self.n_classes]));
        out
    }
}

/// First-order difference over time: `out[t] = h[t+1] - h[t]`.
pub fn diff_op<S: Scalar>(g: &mut Graph<S>, h: Var) -> Result<Var> {
    let t = g.shape(h)[0];
    if t < 2 {
        return Err(Error::SequenceTooShort {
            context: "first-order difference",
            len: t,
            min: 2,
        });
    }
    let next = g.slice_rows(h, 1, t - 1)?;
    let prev = g.slice_rows(h, 0, t - 1)?;
    g.sub(next, prev)
}

fn head_cfg<S>(model: &Model<S>) -> Result<&AnomalyHeadConfig> {
    model
        .head
        .as_ref()
        .ok_or_else(|| Error::Config("model has no anomaly head".into()))
}

/// Multi-scale perception features of one differenced sequence `[T-1, d]`:
/// per kernel size, valid conv → bias → ReLU → max over time; the pooled
/// vectors are concatenated into `[1, sizes·filters]`.
pub fn anomaly_features<S: Scalar>(g: &mut Graph<S>, model: &Model<S>, hdiff: Var) -> Result<Var> {
    let cfg = head_cfg(model)?;
    let len = g.shape(hdiff)[0];
    if len < cfg.max_kernel() {
        return Err(Error::SequenceTooShort {
            context: "anomaly head (differenced length vs widest kernel)",
            len,
            min: cfg.max_kernel(),
        });
    }
    let mut pooled = Vec::with_capacity(cfg.kernel_sizes.len());
    for &k in &cfg.kernel_sizes {
        let w = g.param(&model.params, model.param(&format!("head.conv{k}.w"))?);
        let b = g.param(&model.params, model.param(&format!("head.conv{k}.b"))?);
        let c = g.conv1d(hdiff, w)?;
        let c = g.add_tiled(c, b)?;
        let c = g.relu(c);
        pooled.push(g.max_rows(c)?);
    }
    g.concat_cols(&pooled)
}

/// Dropout → Linear → ReLU → Linear over pooled features `[B, width]`.
pub fn head_logits<S: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<S>,
    model: &Model<S>,
    features: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let cfg = head_cfg(model)?;
    let x = g.dropout(features, cfg.dropout, mode, rng)?;
    let w1 = g.param(&model.params, model.param("head.mlp1.w")?);
    let b1 = g.param(&model.params, model.param("head.mlp1.b")?);
    let w2 = g.param(&model.params, model.param("head.mlp2.w")?);
    let b2 = g.param(&model.params, model.param("head.mlp2.b")?);
    let h = g.matmul(x, w1)?;
    let h = g.add_tiled(h, b1)?;
    let h = g.relu(h);
    let o = g.matmul(h, w2)?;
    g.add_tiled(o, b2)
}

/// Class logits `[1, n_classes]` of one differenced sequence.
pub fn anomaly_head<S: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<S>,
    model: &Model<S>,
    hdiff: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let f = anomaly_features(g, model, hdiff)?;
    head_logits(g, model, f, mode, rng)
}

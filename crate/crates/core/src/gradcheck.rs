//! Central finite-difference checks of every differentiable op and of the
//! composite training losses, in 64-bit arithmetic.
//!
//! Each op output `y` is reduced to `Σ W ⊙ y` with random `W`, so every
//! output element contributes to the probed gradient.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::contrastive::{embed_sequences, infonce_loss};
use crate::data::{BehaviorEvent, BehaviorSequence};
use crate::error::Result;
use crate::model::{init_param, Model, ModelConfig};
use crate::numerics::{Graph, Mode, ParamGroup, Tensor, Var};
use crate::pretrain::{forward_loss, EventBatch};
use crate::rng::{self, SeededRng};
use crate::sft::{sft_logits, AnomalyHeadConfig};

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub probes: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            probes: 24,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpCheck {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn randn(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), v).expect("shape matches")
}

/// Normal draws pushed at least `gap` away from zero, for kinked ops.
fn randn_away(shape: &[usize], gap: f64, rng: &mut SeededRng) -> Tensor<f64> {
    let mut t = randn(shape, rng);
    for v in t.data_mut() {
        *v += gap.copysign(*v);
    }
    t
}

fn weighted_sum(y: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn check_op<F>(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    build: F,
    cfg: &GradcheckConfig,
    rng: &mut SeededRng,
) -> Result<OpCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (g, vars, out) = eval(&inputs)?;
    let w = randn(g.shape(out), rng);
    let grads = g.backward_seeded(out, w.clone())?;
    let mut worst = 0.0f64;
    for _ in 0..cfg.probes {
        let i = rng.random_range(0..inputs.len());
        let c = rng.random_range(0..inputs[i].len());
        let analytic = grads.get(vars[i]).map_or(0.0, |t| t.data()[c]);
        let mut xs = inputs.clone();
        xs[i].data_mut()[c] += cfg.step;
        let (gp, _, op) = eval(&xs)?;
        let plus = weighted_sum(gp.value(op), &w);
        xs[i].data_mut()[c] -= 2.0 * cfg.step;
        let (gm, _, om) = eval(&xs)?;
        let minus = weighted_sum(gm.value(om), &w);
        worst = worst.max(relative_error(analytic, (plus - minus) / (2.0 * cfg.step)));
    }
    Ok(OpCheck {
        name: name.to_string(),
        probes: cfg.probes,
        max_rel_error: worst,
        passed: worst < cfg.tolerance,
    })
}

/// Probes every parameter tensor of `model` at least once.
fn check_model<F>(
    name: &str,
    model: &Model<f64>,
    loss: F,
    cfg: &GradcheckConfig,
    rng: &mut SeededRng,
) -> Result<OpCheck>
where
    F: Fn(&Model<f64>) -> Result<(Graph<f64>, Var)>,
{
    let (g, l) = loss(model)?;
    let grads = g.backward(l)?;
    let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
    let n = ids.len().max(cfg.probes);
    let mut worst = 0.0f64;
    let mut m = model.clone();
    for p in 0..n {
        let id = if p < ids.len() {
            ids[p]
        } else {
            ids[rng.random_range(0..ids.len())]
        };
        let c = rng.random_range(0..model.params.value(id).len());
        let analytic = grads.param(id).map_or(0.0, |t| t.data()[c]);
        let base = m.params.value(id).data()[c];
        m.params.value_mut(id).data_mut()[c] = base + cfg.step;
        let (gp, lp) = loss(&m)?;
        m.params.value_mut(id).data_mut()[c] = base - cfg.step;
        let (gm, lm) = loss(&m)?;
        m.params.value_mut(id).data_mut()[c] = base;
        let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * cfg.step);
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(OpCheck {
        name: name.to_string(),
        probes: n,
        max_rel_error: worst,
        passed: worst < cfg.tolerance,
    })
}

fn random_sequences(
    cards: &[usize],
    lengths: &[usize],
    rng: &mut SeededRng,
) -> Vec<BehaviorSequence> {
    lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| BehaviorSequence {
            user_id: format!("g{i}"),
            events: (0..len)
                .map(|_| {
                    BehaviorEvent::new(
                        cards
                            .iter()
                            .map(|&v| rng.random_range(1..v as u32))
                            .collect(),
                    )
                })
                .collect(),
            label: (i % 2) as u32,
            anomaly_onset: (i % 2 == 1).then_some(0),
        })
        .collect()
}

fn small_model(seed: u64) -> Result<Model<f64>> {
    let cfg = ModelConfig::new(vec![5, 7, 4], 12, 2, 2, 9, 0.1, seed)?;
    Model::init(cfg)
}

/// Runs every check; the caller decides what to do with failures.
pub fn run_suite(cfg: &GradcheckConfig) -> Result<Vec<OpCheck>> {
    let r = &mut rng::stream(cfg.seed, "gradcheck");
    let mut out = Vec::new();

    out.push(check_op(
        "matmul",
        vec![randn(&[3, 4], r), randn(&[4, 5], r)],
        |g, v| g.matmul(v[0], v[1]),
        cfg,
        r,
    )?);
    out.push(check_op(
        "matmul_nt",
        vec![randn(&[3, 4], r), randn(&[5, 4], r)],
        |g, v| g.matmul_nt(v[0], v[1]),
        cfg,
        r,
    )?);
    out.push(check_op(
        "add",
        vec![randn(&[3, 4], r), randn(&[3, 4], r)],
        |g, v| g.add(v[0], v[1]),
        cfg,
        r,
    )?);
    out.push(check_op(
        "sub",
        vec![randn(&[3, 4], r), randn(&[3, 4], r)],
        |g, v| g.sub(v[0], v[1]),
        cfg,
        r,
    )?);
    out.push(check_op(
        "scale",
        vec![randn(&[3, 4], r)],
        |g, v| Ok(g.scale(v[0], -1.7)),
        cfg,
        r,
    )?);
    out.push(check_op(
        "add_tiled(period)",
        vec![randn(&[6, 4], r), randn(&[2, 4], r)],
        |g, v| g.add_tiled(v[0], v[1]),
        cfg,
        r,
    )?);
    out.push(check_op(
        "add_tiled(row)",
        vec![randn(&[6, 4], r), randn(&[1, 4], r)],
        |g, v| g.add_tiled(v[0], v[1]),
        cfg,
        r,
    )?);
    out.push(check_op(
        "relu",
        vec![randn_away(&[4, 5], 0.05, r)],
        |g, v| Ok(g.relu(v[0])),
        cfg,
        r,
    )?);
    out.push(check_op(
        "layer_norm",
        vec![randn(&[4, 6], r), randn(&[1, 6], r), randn(&[1, 6], r)],
        |g, v| g.layer_norm(v[0], v[1], v[2]),
        cfg,
        r,
    )?);
    let drop_seed: u64 = r.random();
    out.push(check_op(
        "dropout",
        vec![randn(&[4, 6], r)],
        move |g, v| g.dropout(v[0], 0.3, Mode::Train, &mut rng::stream(drop_seed, "mask")),
        cfg,
        r,
    )?);
    out.push(check_op(
        "select_rows",
        vec![randn(&[5, 3], r)],
        |g, v| g.select_rows(v[0], &[4, 0, 4, 2]),
        cfg,
        r,
    )?);
    out.push(check_op(
        "slice_cols",
        vec![randn(&[3, 7], r)],
        |g, v| g.slice_cols(v[0], 2, 4),
        cfg,
        r,
    )?);
    out.push(check_op(
        "concat_cols",
        vec![randn(&[3, 2], r), randn(&[3, 4], r)],
        |g, v| g.concat_cols(&[v[0], v[1]]),
        cfg,
        r,
    )?);
    out.push(check_op(
        "slice_rows",
        vec![randn(&[6, 3], r)],
        |g, v| g.slice_rows(v[0], 1, 4),
        cfg,
        r,
    )?);
    out.push(check_op(
        "concat_rows",
        vec![randn(&[2, 3], r), randn(&[4, 3], r)],
        |g, v| g.concat_rows(&[v[0], v[1]]),
        cfg,
        r,
    )?);
    out.push(check_op(
        "causal_attention",
        vec![
            randn(&[2 * 5, 6], r),
            randn(&[2 * 5, 6], r),
            randn(&[2 * 5, 6], r),
        ],
        |g, v| g.causal_attention(v[0], v[1], v[2], 2, 5, 2),
        cfg,
        r,
    )?);
    out.push(check_op(
        "softmax_ce",
        vec![randn(&[4, 5], r)],
        |g, v| g.softmax_ce(v[0], &[1, 0, 4, 4]),
        cfg,
        r,
    )?);
    out.push(check_op(
        "softmax_ce_masked",
        vec![randn(&[4, 5], r)],
        |g, v| g.softmax_ce_masked(v[0], &[Some(2), None, Some(0), None]),
        cfg,
        r,
    )?);
    out.push(check_op(
        "conv1d",
        vec![randn(&[7, 3], r), randn(&[3, 3, 4], r)],
        |g, v| g.conv1d(v[0], v[1]),
        cfg,
        r,
    )?);
    out.push(check_op(
        "max_rows",
        vec![randn(&[6, 4], r)],
        |g, v| g.max_rows(v[0]),
        cfg,
        r,
    )?);
    out.push(check_op(
        "normalize_rows",
        vec![randn_away(&[3, 4], 0.1, r)],
        |g, v| g.normalize_rows(v[0]),
        cfg,
        r,
    )?);
    let mask: Vec<bool> = (0..12).map(|_| r.random()).collect();
    out.push(check_op(
        "where_mask",
        vec![randn(&[3, 4], r), randn(&[3, 4], r)],
        move |g, v| g.where_mask(v[0], v[1], &mask),
        cfg,
        r,
    )?);

    let model = small_model(r.random())?;
    let cards = model.config.cardinalities.clone();
    let seqs = random_sequences(&cards, &[8, 5, 3], r);
    let dseed: u64 = r.random();
    out.push(check_model(
        "reconstruction_loss",
        &model,
        |m| {
            let batch = EventBatch::from_sequences(&seqs, m.config.n_dims())?;
            let mut g = Graph::new();
            let l = forward_loss(
                &mut g,
                m,
                &batch,
                Mode::Train,
                &mut rng::stream(dseed, "drop"),
            )?;
            Ok((g, l))
        },
        cfg,
        r,
    )?);

    let views = random_sequences(&cards, &[6, 8, 4], r);
    out.push(check_model(
        "infonce_loss",
        &model,
        |m| {
            let batch =
                EventBatch::from_sequences(views.iter().chain(views.iter()), m.config.n_dims())?;
            let mut g = Graph::new();
            let e = embed_sequences(
                &mut g,
                m,
                &batch,
                Mode::Train,
                &mut rng::stream(dseed, "views"),
            )?;
            let v = g.slice_rows(e, 0, 3)?;
            let vp = g.slice_rows(e, 3, 3)?;
            let l = infonce_loss(&mut g, v, vp, 0.05)?;
            Ok((g, l))
        },
        cfg,
        r,
    )?);

    let mut tuned = model.clone();
    let head = AnomalyHeadConfig {
        filters: 3,
        hidden: 5,
        ..AnomalyHeadConfig::default()
    };
    let mut hr = rng::stream(dseed, "head");
    for (name, shape) in head.parameter_shapes(tuned.config.d_model) {
        // Non-zero biases keep ReLU pre-activations off their kink.
        let mut v: Tensor<f64> = init_param(&name, &shape, &mut hr);
        if name.ends_with(".b") {
            v = randn(&shape, &mut hr);
        } else {
            for x in v.data_mut() {
                *x *= 10.0;
            }
        }
        tuned.params.insert(name, v, ParamGroup::Head)?;
    }
    tuned.head = Some(head);
    let labelled = random_sequences(&cards, &[8, 6, 7], r);
    out.push(check_model(
        "sft_loss",
        &tuned,
        |m| {
            let refs: Vec<&BehaviorSequence> = labelled.iter().collect();
            let mut g = Graph::new();
            let l = sft_logits(
                &mut g,
                m,
                &refs,
                Mode::Train,
                &mut rng::stream(dseed, "sft"),
            )?;
            let t: Vec<usize> = labelled.iter().map(|s| s.label as usize).collect();
            let loss = g.softmax_ce(l, &t)?;
            Ok((g, loss))
        },
        cfg,
        r,
    )?);
    Ok(out)
}

use rand::Rng;

use super::EventBatch;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Graph, Mode, Scalar, Var};

/// Per-attribute embeddings concatenated along columns, without the
/// positional term: `[batch·max_len, d_model]`. Padded slots embed PAD.
///
/// Attribute `k` only ever writes the columns
/// `embed_offset(k)..embed_offset(k) + embed_dims[k]`.
pub fn attribute_embeddings<S: Scalar>(
    g: &mut Graph<S>,
    model: &Model<S>,
    batch: &EventBatch,
) -> Result<Var> {
    let cfg = &model.config;
    if batch.n_dims() != cfg.n_dims() {
        return Err(Error::Schema(format!(
            "batch has {} attributes, model expects {}",
            batch.n_dims(),
            cfg.n_dims()
        )));
    }
    let mut parts = Vec::with_capacity(cfg.n_dims());
    for (k, &card) in cfg.cardinalities.iter().enumerate() {
        let ids = batch.column(k);
        if let Some(&bad) = ids.iter().find(|&&i| i >= card) {
            return Err(Error::Index {
                context: format!("attribute {k} token id"),
                index: bad,
                extent: card,
            });
        }
        let table = g.param(&model.params, model.param(&format!("embed.{k}"))?);
        parts.push(g.select_rows(table, &ids)?);
    }
    g.concat_cols(&parts)
}

/// Model input rows `[batch·(max_len+1), d_model]`: a learned BOS row
/// followed by the concatenated event embeddings, plus learned absolute
/// positions.
pub fn embed_concat<S: Scalar>(
    g: &mut Graph<S>,
    model: &Model<S>,
    batch: &EventBatch,
) -> Result<Var> {
    let rows = batch.seq_rows();
    if rows > model.config.t_max {
        return Err(Error::Length {
            len: batch.max_len(),
            max: model.config.t_max - 1,
        });
    }
    let events = attribute_embeddings(g, model, batch)?;
    let bos = g.param(&model.params, model.param("bos")?);
    let mut parts = Vec::with_capacity(2 * batch.batch());
    for b in 0..batch.batch() {
        parts.push(bos);
        parts.push(g.slice_rows(events, b * batch.max_len(), batch.max_len())?);
    }
    let x = g.concat_rows(&parts)?;
    let pos_table = g.param(&model.params, model.param("pos")?);
    let pos = g.slice_rows(pos_table, 0, rows)?;
    g.add_tiled(x, pos)
}

fn linear<S: Scalar>(g: &mut Graph<S>, model: &Model<S>, x: Var, w: &str, b: &str) -> Result<Var> {
    let w = g.param(&model.params, model.param(w)?);
    let b = g.param(&model.params, model.param(b)?);
    let y = g.matmul(x, w)?;
    g.add_tiled(y, b)
}

fn norm<S: Scalar>(g: &mut Graph<S>, model: &Model<S>, x: Var, prefix: &str) -> Result<Var> {
    let gamma = g.param(&model.params, model.param(&format!("{prefix}.gamma"))?);
    let beta = g.param(&model.params, model.param(&format!("{prefix}.beta"))?);
    g.layer_norm(x, gamma, beta)
}

/// Pre-norm transformer blocks with causal attention, then a final norm.
/// `x` holds `batch` sequences of `seq` rows each.
pub fn causal_forward<S: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<S>,
    model: &Model<S>,
    x: Var,
    batch: usize,
    seq: usize,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let cfg = &model.config;
    let d = cfg.d_model;
    let p = cfg.dropout;
    let mut h = g.dropout(x, p, mode, rng)?;
    for l in 0..cfg.n_layers {
        let a = norm(g, model, h, &format!("layer{l}.ln1"))?;
        let qkv = linear(
            g,
            model,
            a,
            &format!("layer{l}.attn.w_qkv"),
            &format!("layer{l}.attn.b_qkv"),
        )?;
        let q = g.slice_cols(qkv, 0, d)?;
        let k = g.slice_cols(qkv, d, d)?;
        let v = g.slice_cols(qkv, 2 * d, d)?;
        let att = g.causal_attention(q, k, v, batch, seq, cfg.n_heads)?;
        let o = linear(
            g,
            model,
            att,
            &format!("layer{l}.attn.w_o"),
            &format!("layer{l}.attn.b_o"),
        )?;
        let o = g.dropout(o, p, mode, rng)?;
        h = g.add(h, o)?;

        let m = norm(g, model, h, &format!("layer{l}.ln2"))?;
        let m = linear(
            g,
            model,
            m,
            &format!("layer{l}.mlp.w1"),
            &format!("layer{l}.mlp.b1"),
        )?;
        let m = g.relu(m);
        let m = linear(
            g,
            model,
            m,
            &format!("layer{l}.mlp.w2"),
            &format!("layer{l}.mlp.b2"),
        )?;
        let m = g.dropout(m, p, mode, rng)?;
        h = g.add(h, m)?;
    }
    norm(g, model, h, "ln_f")
}

/// `embed_concat` followed by `causal_forward`.
pub fn forward_hidden<S: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<S>,
    model: &Model<S>,
    batch: &EventBatch,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let x = embed_concat(g, model, batch)?;
    causal_forward(g, model, x, batch.batch(), batch.seq_rows(), mode, rng)
}

/// Splits each hidden row into per-attribute chunks and decodes chunk `k`
/// against the transposed embedding table `embed.{k}`: logits
/// `[rows, V_k]` for every attribute.
pub fn reconstruct_logits<S: Scalar>(
    g: &mut Graph<S>,
    model: &Model<S>,
    h: Var,
) -> Result<Vec<Var>> {
    let cfg = &model.config;
    (0..cfg.n_dims())
        .map(|k| {
            let chunk = g.slice_cols(h, cfg.embed_offset(k), cfg.embed_dims[k])?;
            let table = g.param(&model.params, model.param(&format!("embed.{k}"))?);
            g.matmul_nt(chunk, table)
        })
        .collect()
}

/// Next-event targets per attribute over the model layout. Row
/// `b·(max_len+1) + p` targets event `p` of sequence `b`; the last slot
/// and padding are `None`.
pub fn reconstruction_targets(batch: &EventBatch) -> Vec<Vec<Option<usize>>> {
    let rows = batch.seq_rows();
    (0..batch.n_dims())
        .map(|d| {
            let mut t = vec![None; batch.batch() * rows];
            for (b, &len) in batch.lengths().iter().enumerate() {
                for p in 0..len {
                    t[b * rows + p] = Some(batch.id(b, p, d) as usize);
                }
            }
            t
        })
        .collect()
}

/// Mean over target positions of the mean over attributes of the
/// cross-entropy. Positions without a target are excluded entirely.
pub fn reconstruction_loss<S: Scalar>(
    g: &mut Graph<S>,
    logits: &[Var],
    targets: &[Vec<Option<usize>>],
) -> Result<Var> {
    if logits.is_empty() || logits.len() != targets.len() {
        return Err(Error::Parameter(format!(
            "{} logit tensors for {} target columns",
            logits.len(),
            targets.len()
        )));
    }
    let counts: Vec<usize> = targets.iter().map(|t| t.iter().flatten().count()).collect();
    if counts.iter().any(|&c| c != counts[0]) {
        return Err(Error::Parameter(
            "targets must share one padding mask".into(),
        ));
    }
    let mut total: Option<Var> = None;
    for (&l, t) in logits.iter().zip(targets) {
        let ce = g.softmax_ce_masked(l, t)?;
        total = Some(match total {
            Some(acc) => g.add(acc, ce)?,
            None => ce,
        });
    }
    Ok(g.scale(total.expect("nonempty"), 1.0 / logits.len() as f64))
}

/// Full pretraining objective for one batch.
pub fn forward_loss<S: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<S>,
    model: &Model<S>,
    batch: &EventBatch,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let h = forward_hidden(g, model, batch, mode, rng)?;
    let logits = reconstruct_logits(g, model, h)?;
    reconstruction_loss(g, &logits, &reconstruction_targets(batch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numerics::Tensor;
    use crate::rng;

    fn tiny(cards: Vec<usize>, d: usize, layers: usize, t_max: usize) -> Model<f64> {
        Model::init(ModelConfig::new(cards, d, layers, 2, t_max, 0.0, 4).unwrap()).unwrap()
    }

    fn hidden(model: &Model<f64>, rows: &[Vec<u32>]) -> Tensor<f64> {
        let batch = EventBatch::from_ids(rows).unwrap();
        let mut g = Graph::new();
        let h =
            forward_hidden(&mut g, model, &batch, Mode::Eval, &mut rng::stream(0, "d")).unwrap();
        g.value(h).clone()
    }

    #[test]
    fn embedding_shape_and_slices() {
        let model = tiny(vec![5, 7, 4], 12, 1, 8);
        let cfg = &model.config;
        let rows = vec![vec![1, 2, 3], vec![4, 6, 1]];
        let emb = |rows: &[Vec<u32>]| {
            let batch = EventBatch::from_ids(rows).unwrap();
            let mut g = Graph::new();
            let e = attribute_embeddings(&mut g, &model, &batch).unwrap();
            g.value(e).clone()
        };
        let base = emb(&rows);
        assert_eq!(base.shape(), &[2, 12]);
        let mut changed = rows.clone();
        changed[1][1] = 3;
        let after = emb(&changed);
        let (lo, hi) = (cfg.embed_offset(1), cfg.embed_offset(1) + cfg.embed_dims[1]);
        for r in 0..2 {
            for c in 0..12 {
                let same = base.row(r)[c] == after.row(r)[c];
                assert_eq!(same, !(r == 1 && (lo..hi).contains(&c)), "row {r} col {c}");
            }
        }
        let batch = EventBatch::from_ids(&rows).unwrap();
        let mut g = Graph::new();
        let x = embed_concat(&mut g, &model, &batch).unwrap();
        assert_eq!(g.shape(x), &[3, 12]);
    }

    #[test]
    fn single_attribute_is_plain_token_embedding() {
        let model = tiny(vec![6], 4, 1, 5);
        let batch = EventBatch::from_ids(&[vec![2], vec![5]]).unwrap();
        let mut g = Graph::new();
        let x = embed_concat(&mut g, &model, &batch).unwrap();
        let table = model.params.by_name("embed.0").unwrap();
        let pos = model.params.by_name("pos").unwrap();
        let bos = model.params.by_name("bos").unwrap();
        let v = g.value(x);
        for c in 0..4 {
            assert_eq!(v.row(0)[c], bos.data()[c] + pos.row(0)[c]);
            assert_eq!(v.row(1)[c], table.row(2)[c] + pos.row(1)[c]);
            assert_eq!(v.row(2)[c], table.row(5)[c] + pos.row(2)[c]);
        }
    }

    #[test]
    fn rejects_bad_ids_and_lengths() {
        let model = tiny(vec![5, 7], 8, 1, 4);
        let mut g = Graph::new();
        let bad = EventBatch::from_ids(&[vec![5, 1]]).unwrap();
        assert!(matches!(
            embed_concat(&mut g, &model, &bad),
            Err(Error::Index { .. })
        ));
        let long = EventBatch::from_ids(&vec![vec![1, 1]; 4]).unwrap();
        assert!(matches!(
            embed_concat(&mut g, &model, &long),
            Err(Error::Length { .. })
        ));
    }

    #[test]
    fn single_position_attention_is_trivial() {
        // With one row, attention returns that row's value projection.
        let model = tiny(vec![5], 4, 1, 4);
        let batch = EventBatch::from_ids(&[vec![1]]).unwrap();
        let mut g = Graph::new();
        let x = embed_concat(&mut g, &model, &batch).unwrap();
        let one = g.slice_rows(x, 0, 1).unwrap();
        let v = g.slice_cols(one, 0, 4).unwrap();
        let a = g.causal_attention(v, v, v, 1, 1, 2).unwrap();
        assert_eq!(g.value(a), g.value(v));
    }

    #[test]
    fn earlier_positions_ignore_later_inputs() {
        let model = tiny(vec![9, 9], 8, 2, 10);
        let rows: Vec<Vec<u32>> = (0..6).map(|t| vec![1 + t % 8, 8 - t % 7]).collect();
        let base = hidden(&model, &rows);
        for t in 0..6 {
            let mut changed = rows.clone();
            changed[t] = vec![3, 3];
            if changed == rows {
                changed[t] = vec![4, 4];
            }
            let after = hidden(&model, &changed);
            // Event t sits at model row t + 1.
            for r in 0..=t {
                assert_eq!(base.row(r), after.row(r));
            }
            assert!((t + 1..7).any(|r| base.row(r) != after.row(r)));
        }
    }

    #[test]
    fn decoding_shapes_and_uniform_loss() {
        let model = tiny(vec![2, 3], 4, 1, 6);
        let batch = EventBatch::from_ids(&[vec![1, 2], vec![1, 1], vec![1, 2]]).unwrap();
        let mut g = Graph::new();
        let h =
            forward_hidden(&mut g, &model, &batch, Mode::Eval, &mut rng::stream(0, "d")).unwrap();
        let logits = reconstruct_logits(&mut g, &model, h).unwrap();
        assert_eq!(g.shape(logits[0]), &[4, 2]);
        assert_eq!(g.shape(logits[1]), &[4, 3]);
        let zeros: Vec<Var> = [2, 3]
            .iter()
            .map(|&v| g.constant(Tensor::zeros(&[4, v])))
            .collect();
        let loss = reconstruction_loss(&mut g, &zeros, &reconstruction_targets(&batch)).unwrap();
        let want = (2f64.ln() + 3f64.ln()) / 2.0;
        assert!((g.value(loss).item() - want).abs() < 1e-12);
    }

    #[test]
    fn all_padding_is_empty_loss() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::zeros(&[3, 4]));
        let err = reconstruction_loss(&mut g, &[l], &[vec![None, None, None]]).unwrap_err();
        assert!(matches!(err, Error::EmptyLoss));
    }
}

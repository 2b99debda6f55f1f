//! Tape of executed primitives with reverse-mode differentiation.
//!
//! Nodes are appended in execution order, so every input of a node has a
//! smaller index than the node itself. [`Graph::backward`] walks the tape
//! once in reverse and accumulates gradients additively, which handles
//! fan-out (a value consumed by several ops) without special casing.

use std::collections::HashMap;

use rand::Rng;

use super::kernels::{dot, gemm_nn, gemm_nt, gemm_tn};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Train mode enables dropout; eval mode makes every forward deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<S> {
    Input,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, S),
    AddTiled(Var, Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        rstd: Vec<S>,
    },
    Dropout {
        x: Var,
        mask: Vec<S>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<S>,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<S>,
        count: usize,
    },
    Conv1d {
        x: Var,
        kernels: Var,
    },
    MaxRows {
        x: Var,
        argmax: Vec<usize>,
    },
    NormalizeRows {
        x: Var,
        norms: Vec<S>,
    },
    WhereMask {
        a: Var,
        b: Var,
        mask: Vec<bool>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    bound: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    bound: Vec<(ParamId, Var)>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of every parameter bound into the graph, in id order.
    /// Parameters that did not influence the loss are omitted.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<S>)> {
        self.bound
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_ref().map(|g| (id, g)))
    }

    /// L2 norm over all parameter gradients.
    pub fn global_norm(&self) -> f64 {
        self.params()
            .map(|(_, g)| {
                g.data()
                    .iter()
                    .map(|v| v.as_f64() * v.as_f64())
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales every parameter gradient so the global norm is at most
    /// `max_norm`. Returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            let f = S::of(max_norm / norm);
            for &(_, v) in &self.bound {
                if let Some(g) = self.grads[v.0].as_mut() {
                    g.data_mut().iter_mut().for_each(|x| *x *= f);
                }
            }
        }
        norm
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.bound
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, v)| self.grads[v.0].as_ref())
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Binds a stored parameter as a gradient leaf. Binding the same
    /// parameter twice returns the same node, so every use of a shared
    /// table (e.g. tied embeddings) accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone());
        self.bound.insert(id, v);
        v
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).dims2(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![S::zero(); m * n];
        gemm_nn(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::dim("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![S::zero(); m * n];
        gemm_nt(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = S::of(c);
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    /// `x[i,:] + y[i mod r, :]` for `x: [m,n]`, `y: [r,n]`, `r | m`.
    ///
    /// This is the only broadcast the engine supports: a bias row (`r = 1`)
    /// or a per-position table repeated over a leading batch axis.
    pub fn add_tiled(&mut self, x: Var, y: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "add_tiled")?;
        let (r, n2) = match self.shape(y) {
            [c] => (1, *c),
            _ => self.dims2(y, "add_tiled")?,
        };
        if n != n2 || m % r != 0 {
            return Err(Error::dim("add_tiled", self.shape(x), self.shape(y)));
        }
        let yd = self.value(y).data();
        let mut out = self.value(x).data().to_vec();
        for (i, row) in out.chunks_exact_mut(n).enumerate() {
            let yr = &yd[(i % r) * n..(i % r + 1) * n];
            for (o, &b) in row.iter_mut().zip(yr) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddTiled(x, y), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > S::zero() { v } else { S::zero() })
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    /// Normalizes each row of `x: [m,n]` to zero mean and unit variance
    /// (ε = 1e-5), then applies `gamma`, `beta` of length `n`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "layer_norm")?;
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let eps = S::of(LAYER_NORM_EPS);
        let nf = S::of(n as f64);
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![S::zero(); m * n];
        let mut rstd = vec![S::zero(); m];
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<S>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / nf;
            let rs = S::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// survivors by `1/(1-p)`. Identity when `mode` is eval or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout rate must be in [0,1), got {p}"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = S::of(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = zip_map(self.value(x).data(), &mask, |v, m| v * m);
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Dropout { x, mask }, rg))
    }

    /// Dropout with a caller-supplied mask (entries are the multipliers).
    pub fn apply_mask(&mut self, x: Var, mask: Vec<S>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::dim("apply_mask", self.shape(x), &[mask.len()]));
        }
        let data = zip_map(self.value(x).data(), &mask, |v, m| v * m);
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Dropout { x, mask }, rg))
    }

    /// Gathers rows of `x: [m,n]`; the embedding-lookup primitive.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x, "select_rows")?;
        if rows.is_empty() {
            return Err(Error::Parameter(
                "select_rows needs at least one row".into(),
            ));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::Index {
                    context: "row selection".into(),
                    index: r,
                    extent: m,
                });
            }
            out.extend_from_slice(&xd[r * n..(r + 1) * n]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![rows.len(), n], out)?,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if width == 0 || start + width > n {
            return Err(Error::dim("slice_cols", self.shape(x), &[start, width]));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&xd[i * n + start..i * n + start + width]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![m, width], out)?,
            Op::SliceCols { x, start },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Parameter("concat_cols needs inputs".into()))?;
        let (m, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != m {
                return Err(Error::dim("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_rows")?;
        if len == 0 || start + len > m {
            return Err(Error::dim("slice_rows", self.shape(x), &[start, len]));
        }
        let out = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![len, n], out)?,
            Op::SliceRows { x, start },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Parameter("concat_rows needs inputs".into()))?;
        let (_, n) = self.dims2(first, "concat_rows")?;
        let mut m = 0;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != n {
                return Err(Error::dim("concat_rows", self.shape(first), self.shape(p)));
            }
            m += r;
        }
        let mut out = Vec::with_capacity(m * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention with a strictly causal mask.
    ///
    /// `q`, `k`, `v` are `[batch·seq, d]`, rows grouped by sequence. Row `t`
    /// of a sequence attends to rows `0..=t` of the same sequence only;
    /// masked entries are never computed, so earlier outputs are exactly
    /// independent of later inputs.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    ) -> Result<Var> {
        let (rows, d) = self.dims2(q, "causal_attention")?;
        if self.shape(k) != self.shape(q) || self.shape(v) != self.shape(q) {
            return Err(Error::dim("causal_attention", self.shape(q), self.shape(k)));
        }
        if rows != batch * seq || heads == 0 || d % heads != 0 {
            return Err(Error::dim(
                "causal_attention",
                self.shape(q),
                &[batch, seq, heads],
            ));
        }
        let dh = d / heads;
        let scale = S::of(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![S::zero(); batch * heads * seq * seq];
        let mut out = vec![S::zero(); rows * d];
        for b in 0..batch {
            for h in 0..heads {
                let pbase = (b * heads + h) * seq * seq;
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * d + h * dh..][..dh];
                    let prow = &mut probs[pbase + i * seq..pbase + (i + 1) * seq];
                    let mut max = S::neg_infinity();
                    for (j, pj) in prow.iter_mut().enumerate().take(i + 1) {
                        let kj = &kd[(b * seq + j) * d + h * dh..][..dh];
                        let s = dot(qi, kj) * scale;
                        *pj = s;
                        if s > max {
                            max = s;
                        }
                    }
                    let mut z = S::zero();
                    for pj in prow.iter_mut().take(i + 1) {
                        *pj = (*pj - max).exp();
                        z += *pj;
                    }
                    let orow = &mut out[(b * seq + i) * d + h * dh..][..dh];
                    for (j, pj) in prow.iter_mut().enumerate().take(i + 1) {
                        *pj /= z;
                        let vj = &vd[(b * seq + j) * d + h * dh..][..dh];
                        for (o, &vv) in orow.iter_mut().zip(vj) {
                            *o += *pj * vv;
                        }
                    }
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            Tensor::new(vec![rows, d], out)?,
            Op::CausalAttention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Mean cross-entropy of `logits: [n,V]` against integer targets.
    pub fn softmax_ce(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t: Vec<Option<usize>> = targets.iter().map(|&t| Some(t)).collect();
        self.softmax_ce_masked(logits, &t)
    }

    /// Cross-entropy averaged over rows whose target is `Some`. Rows with
    /// `None` contribute neither to the sum nor to the count.
    pub fn softmax_ce_masked(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (n, vocab) = self.dims2(logits, "softmax_ce")?;
        if targets.len() != n {
            return Err(Error::dim(
                "softmax_ce",
                self.shape(logits),
                &[targets.len()],
            ));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![S::zero(); n * vocab];
        let mut total = S::zero();
        let mut count = 0usize;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= vocab {
                return Err(Error::Index {
                    context: "cross-entropy target".into(),
                    index: t,
                    extent: vocab,
                });
            }
            let row = &ld[i * vocab..(i + 1) * vocab];
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let prow = &mut probs[i * vocab..(i + 1) * vocab];
            let mut z = S::zero();
            for (p, &l) in prow.iter_mut().zip(row) {
                *p = (l - max).exp();
                z += *p;
            }
            for p in prow.iter_mut() {
                *p /= z;
            }
            total += z.ln() + max - row[t];
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let loss = total / S::of(count as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// Valid (unpadded) 1-D convolution over time.
    ///
    /// `x: [T,C]`, `kernels: [K,C,F]` → `[T-K+1, F]` with
    /// `out[t,f] = Σ_{k,c} x[t+k,c]·kernels[k,c,f]`.
    pub fn conv1d(&mut self, x: Var, kernels: Var) -> Result<Var> {
        let (t, c) = self.dims2(x, "conv1d")?;
        let [kk, kc, f] = self.shape(kernels)[..] else {
            return Err(Error::dim("conv1d", self.shape(x), self.shape(kernels)));
        };
        if kc != c {
            return Err(Error::dim("conv1d", self.shape(x), self.shape(kernels)));
        }
        if kk > t {
            return Err(Error::SequenceTooShort {
                context: "conv1d",
                len: t,
                min: kk,
            });
        }
        let t_out = t - kk + 1;
        let xd = self.value(x).data();
        let wd = self.value(kernels).data();
        let mut out = vec![S::zero(); t_out * f];
        // A window of K consecutive rows is contiguous in row-major order,
        // so each output row is a [K·C] × [K·C, F] product.
        for (ti, orow) in out.chunks_exact_mut(f).enumerate() {
            let window = &xd[ti * c..(ti + kk) * c];
            for (&xv, wrow) in window.iter().zip(wd.chunks_exact(f)) {
                for (o, &w) in orow.iter_mut().zip(wrow) {
                    *o += xv * w;
                }
            }
        }
        let rg = self.rg(x) || self.rg(kernels);
        Ok(self.push(
            Tensor::new(vec![t_out, f], out)?,
            Op::Conv1d { x, kernels },
            rg,
        ))
    }

    /// Column-wise maximum over all rows: `[T,n]` → `[1,n]`. The gradient
    /// goes to the first row attaining the maximum.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "max_rows")?;
        let xd = self.value(x).data();
        let mut argmax = vec![0usize; n];
        let mut out = xd[..n].to_vec();
        for i in 1..m {
            for j in 0..n {
                let v = xd[i * n + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![1, n], out)?, Op::MaxRows { x, argmax }, rg))
    }

    /// Scales every row to unit L2 norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "normalize_rows")?;
        let xd = self.value(x).data();
        let mut norms = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let norm = dot(row, row).sqrt();
            if !(norm > S::zero()) {
                return Err(Error::ZeroNorm { row: i });
            }
            norms.push(norm);
            out.extend(row.iter().map(|&v| v / norm));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::NormalizeRows { x, norms },
            rg,
        ))
    }

    /// Elementwise `mask ? a : b`.
    pub fn where_mask(&mut self, a: Var, b: Var, mask: &[bool]) -> Result<Var> {
        self.same_shape(a, b, "where_mask")?;
        if mask.len() != self.value(a).len() {
            return Err(Error::dim("where_mask", self.shape(a), &[mask.len()]));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let data = mask
            .iter()
            .enumerate()
            .map(|(i, &m)| if m { ad[i] } else { bd[i] })
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            t,
            Op::WhereMask {
                a,
                b,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", self.shape(loss), &[1]));
        }
        self.backward_seeded(loss, Tensor::filled(self.shape(loss), S::one()))
    }

    /// Reverse sweep from `out` with upstream gradient `seed`, i.e. the
    /// gradient of `Σ seed ⊙ out`.
    pub fn backward_seeded(&self, out: Var, seed: Tensor<S>) -> Result<Gradients<S>> {
        if seed.shape() != self.shape(out) {
            return Err(Error::dim("backward seed", seed.shape(), self.shape(out)));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, g.data(), &mut grads);
            grads[i] = Some(g);
        }
        let mut bound: Vec<(ParamId, Var)> = self.bound.iter().map(|(&p, &v)| (p, v)).collect();
        bound.sort();
        Ok(Gradients { grads, bound })
    }

    /// Returns the gradient buffer of `v` if it needs one, creating it.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<S>>], v: Var) -> Option<&'g mut [S]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(
            grads[v.0]
                .get_or_insert_with(|| Tensor::zeros(self.shape(v)))
                .data_mut(),
        )
    }

    fn backprop_node(&self, i: usize, g: &[S], grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                if let Some(da) = self.slot(grads, *a) {
                    gemm_nt(g, self.value(*b).data(), da, m, n, k);
                }
                if let Some(db) = self.slot(grads, *b) {
                    gemm_tn(self.value(*a).data(), g, db, k, m, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).rows();
                if let Some(da) = self.slot(grads, *a) {
                    gemm_nn(g, self.value(*b).data(), da, m, n, k);
                }
                if let Some(db) = self.slot(grads, *b) {
                    gemm_tn(g, self.value(*a).data(), db, n, m, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        add_into(d, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    add_into(d, g);
                }
                if let Some(d) = self.slot(grads, *b) {
                    for (o, &gv) in d.iter_mut().zip(g) {
                        *o -= gv;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(d) = self.slot(grads, *x) {
                    for (o, &gv) in d.iter_mut().zip(g) {
                        *o += gv * *c;
                    }
                }
            }
            Op::AddTiled(x, y) => {
                if let Some(d) = self.slot(grads, *x) {
                    add_into(d, g);
                }
                let n = node.value.cols();
                let r = self.value(*y).len() / n;
                if let Some(d) = self.slot(grads, *y) {
                    for (i, grow) in g.chunks_exact(n).enumerate() {
                        add_into(&mut d[(i % r) * n..(i % r + 1) * n], grow);
                    }
                }
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((o, &gv), &xv) in d.iter_mut().zip(g).zip(xd) {
                        if xv > S::zero() {
                            *o += gv;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = node.value.cols();
                let gd = self.value(*gamma).data();
                if let Some(d) = self.slot(grads, *x) {
                    let nf = S::of(n as f64);
                    let mut dxhat = vec![S::zero(); n];
                    for (r, (grow, hrow)) in g.chunks_exact(n).zip(xhat.chunks_exact(n)).enumerate()
                    {
                        let mut m1 = S::zero();
                        let mut m2 = S::zero();
                        for j in 0..n {
                            dxhat[j] = grow[j] * gd[j];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * hrow[j];
                        }
                        m1 /= nf;
                        m2 /= nf;
                        let drow = &mut d[r * n..(r + 1) * n];
                        for j in 0..n {
                            drow[j] += rstd[r] * (dxhat[j] - m1 - hrow[j] * m2);
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *gamma) {
                    for (grow, hrow) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for j in 0..n {
                            d[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *beta) {
                    for grow in g.chunks_exact(n) {
                        add_into(d, grow);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((o, &gv), &mv) in d.iter_mut().zip(g).zip(mask) {
                        *o += gv * mv;
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                let n = node.value.cols();
                if let Some(d) = self.slot(grads, *x) {
                    for (grow, &r) in g.chunks_exact(n).zip(rows) {
                        add_into(&mut d[r * n..(r + 1) * n], grow);
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let w = node.value.cols();
                let n = self.value(*x).cols();
                if let Some(d) = self.slot(grads, *x) {
                    for (r, grow) in g.chunks_exact(w).enumerate() {
                        add_into(&mut d[r * n + start..r * n + start + w], grow);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let n = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(d) = self.slot(grads, p) {
                        for (r, drow) in d.chunks_exact_mut(w).enumerate() {
                            add_into(drow, &g[r * n + off..r * n + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::SliceRows { x, start } => {
                let n = node.value.cols();
                if let Some(d) = self.slot(grads, *x) {
                    add_into(&mut d[start * n..start * n + g.len()], g);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(d) = self.slot(grads, p) {
                        add_into(d, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::CausalAttention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            } => self.attention_backward(g, grads, [*q, *k, *v], *batch, *seq, *heads, probs),
            Op::SoftmaxCe {
                logits,
                targets,
                probs,
                count,
            } => {
                let vocab = self.value(*logits).cols();
                let scale = g[0] / S::of(*count as f64);
                if let Some(d) = self.slot(grads, *logits) {
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let drow = &mut d[i * vocab..(i + 1) * vocab];
                        for (o, &p) in drow.iter_mut().zip(&probs[i * vocab..(i + 1) * vocab]) {
                            *o += p * scale;
                        }
                        drow[t] -= scale;
                    }
                }
            }
            Op::Conv1d { x, kernels } => {
                let c = self.value(*x).cols();
                let f = node.value.cols();
                let kc = self.value(*kernels).rows() * c;
                if let Some(dw) = self.slot(grads, *kernels) {
                    let xd = self.value(*x).data();
                    for (ti, grow) in g.chunks_exact(f).enumerate() {
                        let window = &xd[ti * c..ti * c + kc];
                        for (&xv, dwrow) in window.iter().zip(dw.chunks_exact_mut(f)) {
                            for (o, &gv) in dwrow.iter_mut().zip(grow) {
                                *o += xv * gv;
                            }
                        }
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    let wd = self.value(*kernels).data();
                    for (ti, grow) in g.chunks_exact(f).enumerate() {
                        let window = &mut dx[ti * c..ti * c + kc];
                        for (o, wrow) in window.iter_mut().zip(wd.chunks_exact(f)) {
                            *o += dot(grow, wrow);
                        }
                    }
                }
            }
            Op::MaxRows { x, argmax } => {
                let n = node.value.cols();
                if let Some(d) = self.slot(grads, *x) {
                    for (j, &r) in argmax.iter().enumerate() {
                        d[r * n + j] += g[j];
                    }
                }
            }
            Op::NormalizeRows { x, norms } => {
                let n = node.value.cols();
                let y = node.value.data();
                if let Some(d) = self.slot(grads, *x) {
                    for (r, &norm) in norms.iter().enumerate() {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let yg = dot(yr, gr);
                        for j in 0..n {
                            d[r * n + j] += (gr[j] - yr[j] * yg) / norm;
                        }
                    }
                }
            }
            Op::WhereMask { a, b, mask } => {
                if let Some(d) = self.slot(grads, *a) {
                    for ((o, &gv), &m) in d.iter_mut().zip(g).zip(mask) {
                        if m {
                            *o += gv;
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((o, &gv), &m) in d.iter_mut().zip(g).zip(mask) {
                        if !m {
                            *o += gv;
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[S],
        grads: &mut [Option<Tensor<S>>],
        [q, k, v]: [Var; 3],
        batch: usize,
        seq: usize,
        heads: usize,
        probs: &[S],
    ) {
        let d = self.value(q).cols();
        let dh = d / heads;
        let scale = S::of(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut dq = vec![S::zero(); qd.len()];
        let mut dk = vec![S::zero(); kd.len()];
        let mut dv = vec![S::zero(); vd.len()];
        let mut ds = vec![S::zero(); seq];
        for b in 0..batch {
            for h in 0..heads {
                let pbase = (b * heads + h) * seq * seq;
                for i in 0..seq {
                    let prow = &probs[pbase + i * seq..pbase + i * seq + i + 1];
                    let go = &g[(b * seq + i) * d + h * dh..][..dh];
                    let mut acc = S::zero();
                    for (j, &p) in prow.iter().enumerate() {
                        let vrow = (b * seq + j) * d + h * dh;
                        let dp = dot(go, &vd[vrow..vrow + dh]);
                        ds[j] = dp;
                        acc += p * dp;
                        for (o, &gv) in dv[vrow..vrow + dh].iter_mut().zip(go) {
                            *o += p * gv;
                        }
                    }
                    let qrow = (b * seq + i) * d + h * dh;
                    for (j, &p) in prow.iter().enumerate() {
                        let s = p * (ds[j] - acc) * scale;
                        let krow = (b * seq + j) * d + h * dh;
                        for c in 0..dh {
                            dq[qrow + c] += s * kd[krow + c];
                            dk[krow + c] += s * qd[qrow + c];
                        }
                    }
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(slot) = self.slot(grads, var) {
                add_into(slot, &buf);
            }
        }
    }
}

fn zip_map<S: Scalar>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[inline]
fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}

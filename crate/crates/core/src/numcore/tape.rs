//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to run its backward rule. Nodes are appended in evaluation order, so
//! the node list is already topologically sorted and [`Tape::backward`] simply
//! walks it in reverse. Parameters enter through [`Tape::param`] and share
//! storage with the [`ParameterStore`] until it is next updated.

use std::sync::Arc;

use indexmap::IndexMap;

use super::params::ParameterStore;
use super::tensor::{matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Boolean attention mask, `true` = query row may attend to key column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allowed.push(f(i, j));
            }
        }
        Self {
            rows,
            cols,
            allowed,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.cols..(i + 1) * self.cols]
    }
}

/// Soft-combination weights with the silence class normalized out.
///
/// Returns `(pA / (pA + pB), pB / (pA + pB))`, or `(0.5, 0.5)` when the two
/// locale probabilities sum below `1e-8`.
pub fn combination_weights(p_a: f64, p_b: f64) -> (f64, f64) {
    let s = p_a + p_b;
    if s < COMBINE_FLOOR {
        (0.5, 0.5)
    } else {
        (p_a / s, p_b / s)
    }
}

const COMBINE_FLOOR: f64 = 1e-8;

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    Gelu(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        mask: Arc<AttentionMask>,
        probs: Vec<f64>,
    },
    Softmax {
        x: usize,
        axis: usize,
    },
    LogSoftmax(usize),
    Nll {
        logp: usize,
        targets: Vec<usize>,
        weights: Vec<f64>,
        denom: f64,
    },
    ConcatCols(usize, usize),
    ConcatRows(usize, usize),
    SoftCombine {
        a: usize,
        b: usize,
        lid: usize,
    },
    Sum(usize),
    Combine(Vec<(usize, f64)>),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of named parameters produced by one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: IndexMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds these gradients onto the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParameterStore) -> Result<()> {
        for (name, g) in &self.grads {
            store.accumulate_grad(name, g)?;
        }
        Ok(())
    }
}

pub struct Tape {
    nodes: Vec<Node>,
    params: IndexMap<String, usize>,
    grad_enabled: bool,
    frozen: Vec<String>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: IndexMap::new(),
            grad_enabled: true,
            frozen: Vec::new(),
        }
    }

    /// A tape that records values only; nothing requires gradients.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Parameters whose names start with any of `prefixes` enter as constants.
    pub fn with_frozen(mut self, prefixes: impl IntoIterator<Item = String>) -> Self {
        self.frozen.extend(prefixes);
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Puts a parameter on the tape, reusing the leaf if it is already there.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&idx) = self.params.get(name) {
            return Ok(Var(idx));
        }
        let value = store
            .value_arc(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let frozen = self.frozen.iter().any(|p| name.starts_with(p.as_str()));
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: self.grad_enabled && !frozen,
        });
        self.params.insert(name.to_string(), idx);
        Ok(Var(idx))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn expect_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                left: s.to_vec(),
                right: vec![0, 0],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.expect_matrix("matmul", a)?;
        let (k2, n) = self.expect_matrix("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(
            self.value(a).data(),
            self.value(b).data(),
            m,
            k,
            n,
            &mut out,
        );
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.expect_matrix("add_bias", a)?;
        if self.shape(bias) != [n] {
            return Err(self.mismatch("add_bias", a, bias));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (x, y) in data[i * n..(i + 1) * n].iter_mut().zip(b) {
                *x += y;
            }
        }
        let t = Tensor::new(vec![m, n], data)?;
        Ok(self.push(t, Op::AddBias(a.0, bias.0), &[a.0, bias.0]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(a.0, factor), &[a.0])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| gelu(x)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::Gelu(a.0), &[a.0])
    }

    /// Row-wise layer normalization with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.expect_matrix("layer_norm", x)?;
        if self.shape(gain) != [n] {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.shape(bias) != [n] {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
            &[x.0, gain.0, bias.0],
        ))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `Tq×d`, `k` and `v` are `Tk×d`; the model dimension is split
    /// evenly across `heads` and scores are scaled by `1/sqrt(d/heads)`.
    /// Disallowed positions get exactly zero weight; a row with no allowed
    /// key yields a zero output row.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Arc<AttentionMask>,
    ) -> Result<Var> {
        let (tq, d) = self.expect_matrix("attention", q)?;
        let (tk, dk) = self.expect_matrix("attention", k)?;
        if dk != d {
            return Err(self.mismatch("attention", q, k));
        }
        if self.shape(v) != [tk, d] {
            return Err(self.mismatch("attention", k, v));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "model dimension {d} not divisible by {heads} heads"
            )));
        }
        if mask.rows() != tq || mask.cols() != tk {
            return Err(Error::ShapeMismatch {
                op: "attention mask",
                left: vec![tq, tk],
                right: vec![mask.rows(), mask.cols()],
            });
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qv = self.value(q).data();
        let kv = self.value(k).data();
        let vv = self.value(v).data();
        let mut out = vec![0.0; tq * d];
        let mut probs = vec![0.0; heads * tq * tk];
        let mut scores = vec![0.0; tk];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..tq {
                let allowed = mask.row(i);
                let qi = &qv[i * d + off..i * d + off + dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..tk {
                    if allowed[j] {
                        let kj = &kv[j * d + off..j * d + off + dh];
                        let s = dot(qi, kj) * scale;
                        scores[j] = s;
                        if s > max {
                            max = s;
                        }
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut total = 0.0;
                for j in 0..tk {
                    if allowed[j] {
                        let e = (scores[j] - max).exp();
                        scores[j] = e;
                        total += e;
                    }
                }
                let p_row = &mut probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                let o = &mut out[i * d + off..i * d + off + dh];
                for j in 0..tk {
                    if allowed[j] {
                        let p = scores[j] / total;
                        p_row[j] = p;
                        let vj = &vv[j * d + off..j * d + off + dh];
                        for (oc, &vc) in o.iter_mut().zip(vj) {
                            *oc += p * vc;
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![tq, d], out)?;
        Ok(self.push(
            t,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                heads,
                mask,
                probs,
            },
            &[q.0, k.0, v.0],
        ))
    }

    /// Softmax along `axis` (0 or 1 for matrices, 0 for vectors).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (lines, len, stride, step) = softmax_layout(&shape, axis)?;
        let xv = self.value(x);
        if !xv.is_finite() {
            return Err(Error::NonFinite("softmax"));
        }
        let xv = xv.data();
        let mut out = vec![0.0; xv.len()];
        for line in 0..lines {
            let base = line_base(line, step);
            let max = (0..len)
                .map(|e| xv[base + e * stride])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for e in 0..len {
                let v = (xv[base + e * stride] - max).exp();
                out[base + e * stride] = v;
                total += v;
            }
            for e in 0..len {
                out[base + e * stride] /= total;
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Softmax { x: x.0, axis }, &[x.0]))
    }

    /// Row-wise log-softmax of a matrix.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.expect_matrix("log_softmax", x)?;
        let xv = self.value(x);
        if !xv.is_finite() {
            return Err(Error::NonFinite("log_softmax"));
        }
        let xv = xv.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..n {
                out[i * n + j] = row[j] - lse;
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::LogSoftmax(x.0), &[x.0]))
    }

    /// Mean negative log-likelihood of `targets` under row log-probabilities.
    ///
    /// With `class_weights`, frame `t` counts with weight `w[target_t]` and
    /// the sum is divided by the total weight.
    pub fn nll(
        &mut self,
        logp: Var,
        targets: &[usize],
        class_weights: Option<&[f64]>,
    ) -> Result<Var> {
        self.nll_impl(logp, targets, class_weights, None)
    }

    /// Summed negative log-likelihood divided by `denominator`.
    pub fn nll_over(&mut self, logp: Var, targets: &[usize], denominator: f64) -> Result<Var> {
        self.nll_impl(logp, targets, None, Some(denominator))
    }

    fn nll_impl(
        &mut self,
        logp: Var,
        targets: &[usize],
        class_weights: Option<&[f64]>,
        denominator: Option<f64>,
    ) -> Result<Var> {
        let (m, n) = self.expect_matrix("nll", logp)?;
        if targets.len() != m {
            return Err(Error::ShapeMismatch {
                op: "nll targets",
                left: vec![m],
                right: vec![targets.len()],
            });
        }
        if let Some(w) = class_weights {
            if w.len() != n {
                return Err(Error::ShapeMismatch {
                    op: "nll class weights",
                    left: vec![n],
                    right: vec![w.len()],
                });
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Invalid(
                    "class weights must be finite and nonnegative".into(),
                ));
            }
        }
        let lp = self.value(logp).data();
        let mut weights = Vec::with_capacity(m);
        let mut sum = 0.0;
        for (frame, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(Error::TargetOutOfRange {
                    frame,
                    target: t,
                    classes: n,
                });
            }
            let w = class_weights.map_or(1.0, |cw| cw[t]);
            weights.push(w);
            sum -= w * lp[frame * n + t];
        }
        let denom = denominator.unwrap_or_else(|| weights.iter().sum());
        let loss = if denom > 0.0 { sum / denom } else { 0.0 };
        let t = Tensor::scalar(loss);
        Ok(self.push(
            t,
            Op::Nll {
                logp: logp.0,
                targets: targets.to_vec(),
                weights,
                denom,
            },
            &[logp.0],
        ))
    }

    /// Mean cross-entropy of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        class_weights: Option<&[f64]>,
    ) -> Result<Var> {
        let lp = self.log_softmax(logits)?;
        self.nll(lp, targets, class_weights)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.expect_matrix("concat_cols", a)?;
        let (m2, q) = self.expect_matrix("concat_cols", b)?;
        if m != m2 {
            return Err(self.mismatch("concat_cols", a, b));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&av[i * p..(i + 1) * p]);
            out.extend_from_slice(&bv[i * q..(i + 1) * q]);
        }
        let t = Tensor::new(vec![m, p + q], out)?;
        Ok(self.push(t, Op::ConcatCols(a.0, b.0), &[a.0, b.0]))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.expect_matrix("concat_rows", a)?;
        let (r, n2) = self.expect_matrix("concat_rows", b)?;
        if n != n2 {
            return Err(self.mismatch("concat_rows", a, b));
        }
        let mut out = Vec::with_capacity((m + r) * n);
        out.extend_from_slice(self.value(a).data());
        out.extend_from_slice(self.value(b).data());
        let t = Tensor::new(vec![m + r, n], out)?;
        Ok(self.push(t, Op::ConcatRows(a.0, b.0), &[a.0, b.0]))
    }

    /// Per-frame `wA·a + wB·b` with weights from the first two LID columns,
    /// see [`combination_weights`]. The third (silence) column is ignored.
    pub fn soft_combine(&mut self, a: Var, b: Var, lid: Var) -> Result<Var> {
        let (m, n) = self.expect_matrix("soft_combine", a)?;
        if self.shape(b) != [m, n] {
            return Err(self.mismatch("soft_combine", a, b));
        }
        if self.shape(lid) != [m, 3] {
            return Err(self.mismatch("soft_combine", a, lid));
        }
        let (av, bv, pv) = (
            self.value(a).data(),
            self.value(b).data(),
            self.value(lid).data(),
        );
        let mut out = vec![0.0; m * n];
        for t in 0..m {
            let (wa, wb) = combination_weights(pv[t * 3], pv[t * 3 + 1]);
            for j in 0..n {
                out[t * n + j] = wa * av[t * n + j] + wb * bv[t * n + j];
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            t,
            Op::SoftCombine {
                a: a.0,
                b: b.0,
                lid: lid.0,
            },
            &[a.0, b.0, lid.0],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0), &[a.0])
    }

    /// `Σ cᵢ·xᵢ` over one-element tensors.
    pub fn linear_combination(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, c) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::NonScalarLoss(t.shape().to_vec()));
            }
            total += c * t.item();
        }
        let ids: Vec<usize> = terms.iter().map(|(v, _)| v.0).collect();
        Ok(self.push(
            Tensor::scalar(total),
            Op::Combine(terms.iter().map(|&(v, c)| (v.0, c)).collect()),
            &ids,
        ))
    }

    /// Backpropagates from a scalar `loss`, returns parameter gradients and
    /// clears the tape. Parameters on the tape that the loss does not depend
    /// on receive zero gradients; frozen parameters receive none.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let nodes = std::mem::take(&mut self.nodes);
        let params = std::mem::take(&mut self.params);
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(nodes.len(), || None);
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            backward_node(&nodes, &mut grads, node, &g);
        }
        let mut out = IndexMap::new();
        for (name, idx) in params {
            if nodes[idx].requires_grad {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| vec![0.0; nodes[idx].value.len()]);
                out.insert(name, g);
            }
        }
        Ok(Gradients { grads: out })
    }

    /// Runs [`Tape::backward`] and adds the result onto `store`'s gradients.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        self.backward(loss)?.accumulate_into(store)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// (lines, line length, element stride, line step) for a softmax axis.
fn softmax_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize, usize)> {
    match (shape.len(), axis) {
        (1, 0) => Ok((1, shape[0], 1, 0)),
        (2, 1) => Ok((shape[0], shape[1], 1, shape[1])),
        (2, 0) => Ok((shape[1], shape[0], shape[1], 1)),
        _ => Err(Error::Invalid(format!(
            "softmax axis {axis} invalid for shape {shape:?}"
        ))),
    }
}

fn line_base(line: usize, step: usize) -> usize {
    line * step
}

fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    i: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[i].requires_grad {
        return None;
    }
    Some(grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()]))
}

fn add_into(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, delta: &[f64]) {
    if let Some(s) = slot(nodes, grads, i) {
        for (x, d) in s.iter_mut().zip(delta) {
            *x += d;
        }
    }
}

fn backward_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], node: &Node, g: &[f64]) {
    let val = |i: usize| nodes[i].value.as_ref();
    let req = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (m, k) = (val(a).rows(), val(a).cols());
            let n = val(b).cols();
            let (av, bv) = (val(a).data(), val(b).data());
            if req(a) {
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        da[i * k + p] = dot(gi, &bv[p * n..(p + 1) * n]);
                    }
                }
                add_into(nodes, grads, a, &da);
            }
            if req(b) {
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let a_ip = av[i * k + p];
                        for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(gi) {
                            *d += a_ip * gv;
                        }
                    }
                }
                add_into(nodes, grads, b, &db);
            }
        }
        &Op::Add(a, b) => {
            add_into(nodes, grads, a, g);
            add_into(nodes, grads, b, g);
        }
        &Op::AddBias(a, bias) => {
            add_into(nodes, grads, a, g);
            if req(bias) {
                let n = val(bias).len();
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    for (d, x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                add_into(nodes, grads, bias, &db);
            }
        }
        &Op::Scale(a, f) => {
            let d: Vec<f64> = g.iter().map(|x| x * f).collect();
            add_into(nodes, grads, a, &d);
        }
        &Op::Gelu(a) => {
            let d: Vec<f64> = g
                .iter()
                .zip(val(a).data())
                .map(|(gv, &x)| gv * gelu_grad(x))
                .collect();
            add_into(nodes, grads, a, &d);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let (x, gain, bias) = (*x, *gain, *bias);
            let n = val(gain).len();
            let m = inv_std.len();
            let gv = val(gain).data();
            if req(x) {
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    let hi = &xhat[i * n..(i + 1) * n];
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for j in 0..n {
                        let d = gi[j] * gv[j];
                        mean_d += d;
                        mean_dh += d * hi[j];
                    }
                    mean_d /= n as f64;
                    mean_dh /= n as f64;
                    for j in 0..n {
                        let d = gi[j] * gv[j];
                        dx[i * n + j] = inv_std[i] * (d - mean_d - hi[j] * mean_dh);
                    }
                }
                add_into(nodes, grads, x, &dx);
            }
            if req(gain) {
                let mut dg = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        dg[j] += g[i * n + j] * xhat[i * n + j];
                    }
                }
                add_into(nodes, grads, gain, &dg);
            }
            if req(bias) {
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    for (d, x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                add_into(nodes, grads, bias, &db);
            }
        }
        Op::Attention {
            q,
            k,
            v,
            heads,
            mask,
            probs,
        } => {
            let (q, k, v, heads) = (*q, *k, *v, *heads);
            let (tq, d) = (val(q).rows(), val(q).cols());
            let tk = val(k).rows();
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let (qv, kv, vv) = (val(q).data(), val(k).data(), val(v).data());
            let mut dq = vec![0.0; tq * d];
            let mut dk = vec![0.0; tk * d];
            let mut dv = vec![0.0; tk * d];
            let mut ds = vec![0.0; tk];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..tq {
                    let allowed = mask.row(i);
                    let p_row = &probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                    let gi = &g[i * d + off..i * d + off + dh];
                    let mut weighted = 0.0;
                    for j in 0..tk {
                        if allowed[j] && p_row[j] != 0.0 {
                            let vj = &vv[j * d + off..j * d + off + dh];
                            let dp = dot(gi, vj);
                            ds[j] = dp;
                            weighted += p_row[j] * dp;
                            for (dvc, &gc) in dv[j * d + off..j * d + off + dh].iter_mut().zip(gi) {
                                *dvc += p_row[j] * gc;
                            }
                        } else {
                            ds[j] = 0.0;
                        }
                    }
                    let qi = &qv[i * d + off..i * d + off + dh];
                    for j in 0..tk {
                        if allowed[j] && p_row[j] != 0.0 {
                            let s = p_row[j] * (ds[j] - weighted) * scale;
                            let kj = &kv[j * d + off..j * d + off + dh];
                            for c in 0..dh {
                                dq[i * d + off + c] += s * kj[c];
                                dk[j * d + off + c] += s * qi[c];
                            }
                        }
                    }
                }
            }
            add_into(nodes, grads, q, &dq);
            add_into(nodes, grads, k, &dk);
            add_into(nodes, grads, v, &dv);
        }
        &Op::Softmax { x, axis } => {
            let y = node.value.data();
            let shape = node.value.shape();
            let (lines, len, stride, step) = softmax_layout(shape, axis).expect("checked");
            let mut dx = vec![0.0; y.len()];
            for line in 0..lines {
                let base = line_base(line, step);
                let s: f64 = (0..len)
                    .map(|e| g[base + e * stride] * y[base + e * stride])
                    .sum();
                for e in 0..len {
                    let idx = base + e * stride;
                    dx[idx] = y[idx] * (g[idx] - s);
                }
            }
            add_into(nodes, grads, x, &dx);
        }
        &Op::LogSoftmax(x) => {
            let y = node.value.data();
            let n = node.value.cols();
            let mut dx = vec![0.0; y.len()];
            for (i, gi) in g.chunks(n).enumerate() {
                let s: f64 = gi.iter().sum();
                for j in 0..n {
                    dx[i * n + j] = gi[j] - y[i * n + j].exp() * s;
                }
            }
            add_into(nodes, grads, x, &dx);
        }
        Op::Nll {
            logp,
            targets,
            weights,
            denom,
        } => {
            if *denom > 0.0 {
                let n = val(*logp).cols();
                let mut d = vec![0.0; val(*logp).len()];
                for (frame, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    d[frame * n + t] = -g[0] * w / denom;
                }
                add_into(nodes, grads, *logp, &d);
            }
        }
        &Op::ConcatCols(a, b) => {
            let p = val(a).cols();
            let q = val(b).cols();
            let m = val(a).rows();
            if req(a) {
                let da: Vec<f64> = (0..m)
                    .flat_map(|i| g[i * (p + q)..i * (p + q) + p].iter().copied())
                    .collect();
                add_into(nodes, grads, a, &da);
            }
            if req(b) {
                let db: Vec<f64> = (0..m)
                    .flat_map(|i| g[i * (p + q) + p..(i + 1) * (p + q)].iter().copied())
                    .collect();
                add_into(nodes, grads, b, &db);
            }
        }
        &Op::ConcatRows(a, b) => {
            let split = val(a).len();
            add_into(nodes, grads, a, &g[..split]);
            add_into(nodes, grads, b, &g[split..]);
        }
        &Op::SoftCombine { a, b, lid } => {
            let (m, n) = (val(a).rows(), val(a).cols());
            let (av, bv, pv) = (val(a).data(), val(b).data(), val(lid).data());
            let mut da = vec![0.0; m * n];
            let mut db = vec![0.0; m * n];
            let mut dl = vec![0.0; m * 3];
            for t in 0..m {
                let (pa, pb) = (pv[t * 3], pv[t * 3 + 1]);
                let (wa, wb) = combination_weights(pa, pb);
                let mut gwa = 0.0;
                let mut gwb = 0.0;
                for j in 0..n {
                    let gj = g[t * n + j];
                    da[t * n + j] = wa * gj;
                    db[t * n + j] = wb * gj;
                    gwa += gj * av[t * n + j];
                    gwb += gj * bv[t * n + j];
                }
                let s = pa + pb;
                if s >= COMBINE_FLOOR {
                    let s2 = s * s;
                    dl[t * 3] = (gwa - gwb) * pb / s2;
                    dl[t * 3 + 1] = (gwb - gwa) * pa / s2;
                }
            }
            add_into(nodes, grads, a, &da);
            add_into(nodes, grads, b, &db);
            add_into(nodes, grads, lid, &dl);
        }
        &Op::Sum(a) => {
            let d = vec![g[0]; val(a).len()];
            add_into(nodes, grads, a, &d);
        }
        Op::Combine(terms) => {
            for &(v, c) in terms {
                add_into(nodes, grads, v, &[g[0] * c]);
            }
        }
    }
}

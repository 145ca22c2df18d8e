//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: every operation evaluates eagerly and records
//! enough to replay its adjoint. Parameters enter through [`Graph::param`]
//! and their gradients are collected by index after [`Graph::backward`].

use super::ops;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Operation with a hand-written adjoint, defined outside this module.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradient with respect to each input, in input order.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddTiled(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Gelu(Var),
    Softplus(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Tensor,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    SelectRows(Var, Vec<usize>),
    Interleave(Vec<Var>),
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    CosineLoss(Var, Var),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Trainable leaf identified by `index` in the caller's parameter list.
    pub fn param(&mut self, index: usize, value: Tensor) -> Var {
        self.push(value, Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// `a + row` with `row` (1 x n) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a 1 x n row");
        let mut out = self.value(a).clone();
        assert_eq!(out.cols(), r.cols(), "add_row width mismatch");
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// `a + tile` where `tile` (L x n) repeats down the rows of `a` (B*L x n).
    pub fn add_tiled(&mut self, a: Var, tile: Var) -> Var {
        let t = self.value(tile);
        let mut out = self.value(a).clone();
        assert_eq!(out.cols(), t.cols(), "add_tiled width mismatch");
        assert_eq!(out.rows() % t.rows(), 0, "add_tiled height mismatch");
        for i in 0..out.rows() {
            let src = t.row(i % t.rows());
            for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                *o += b;
            }
        }
        self.push(out, Op::AddTiled(a, tile))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        self.push(out, Op::Scale(a, factor))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, factor: Tensor) -> Var {
        let out = zip_map(self.value(a), &factor, |x, f| x * f);
        self.push(out, Op::MulConst(a, factor))
    }

    /// `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(ops::gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(ops::softplus);
        self.push(out, Op::Softplus(a))
    }

    /// Row-wise layer normalisation with affine `gain` and `bias` (1 x n).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut normalized = Tensor::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let (n, s) = ops::normalize(xv.row(r));
            normalized.row_mut(r).copy_from_slice(&n);
            rstd.push(s);
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = normalized.clone();
        for r in 0..rows {
            for ((o, gi), bi) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gi + bi;
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                rstd,
            },
        )
    }

    /// Multi-head scaled dot-product self-attention without masking.
    ///
    /// `q`, `k`, `v` are `(B*seq_len) x d`; each block of `seq_len` rows is
    /// one sequence, and the `d` columns split into `heads` equal slices.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, seq_len: usize, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, d) = (qv.rows(), qv.cols());
        assert!(d % heads == 0 && rows % seq_len == 0, "attention shape");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let blocks = rows / seq_len;
        let mut out = Tensor::zeros(rows, d);
        let mut probs = vec![0.0; blocks * heads * seq_len * seq_len];
        let mut scores = vec![0.0; seq_len];
        for b in 0..blocks {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..seq_len {
                    let qi = &qv.row(b * seq_len + i)[cols.clone()];
                    for (j, s) in scores.iter_mut().enumerate() {
                        let kj = &kv.row(b * seq_len + j)[cols.clone()];
                        *s = ops::dot(qi, kj) * scale;
                    }
                    let p = ops::softmax(&scores);
                    let base = ((b * heads + h) * seq_len + i) * seq_len;
                    probs[base..base + seq_len].copy_from_slice(&p);
                    let orow = &mut out.row_mut(b * seq_len + i)[cols.clone()];
                    for (j, pj) in p.iter().enumerate() {
                        let vj = &vv.row(b * seq_len + j)[cols.clone()];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += pj * x;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                probs,
            },
        )
    }

    pub fn select_rows(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(indices.len(), av.cols());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(av.row(i));
        }
        self.push(out, Op::SelectRows(a, indices))
    }

    /// Interleave equally shaped `B x n` parts into `(B*parts) x n` so that
    /// output row `b * parts + j` is row `b` of part `j`.
    pub fn interleave(&mut self, parts: Vec<Var>) -> Var {
        let first = self.value(parts[0]);
        let (rows, cols) = (first.rows(), first.cols());
        let n = parts.len();
        let mut out = Tensor::zeros(rows * n, cols);
        for (j, &p) in parts.iter().enumerate() {
            let pv = self.value(p);
            assert_eq!(pv.shape(), [rows, cols], "interleave parts differ in shape");
            for b in 0..rows {
                out.row_mut(b * n + j).copy_from_slice(pv.row(b));
            }
        }
        self.push(out, Op::Interleave(parts))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in &parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(out, Op::ConcatCols(parts))
    }

    /// Summed softmax cross-entropy of each logit row against its target.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() {
            return Err(Error::Numeric(format!(
                "{} targets for {} logit rows",
                targets.len(),
                lv.rows()
            )));
        }
        let mut probs = Tensor::zeros(lv.rows(), lv.cols());
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= lv.cols() {
                return Err(Error::Encoding {
                    question: 0,
                    id: t,
                    size: lv.cols(),
                });
            }
            let row = lv.row(r);
            loss += ops::log_sum_exp(row) - row[t];
            probs.row_mut(r).copy_from_slice(&ops::softmax(row));
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
        ))
    }

    /// Sum over rows of `1 - cos(u_r, v_r)`; a zero row counts as cosine 0.
    pub fn cosine_loss(&mut self, u: Var, v: Var) -> Var {
        let (uv, vv) = (self.value(u), self.value(v));
        assert_eq!(uv.shape(), vv.shape(), "cosine_loss shape mismatch");
        let loss: f64 = (0..uv.rows())
            .map(|r| 1.0 - ops::cosine(uv.row(r), vv.row(r)))
            .sum();
        self.push(Tensor::scalar(loss), Op::CosineLoss(u, v))
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: Vec<Var>, output: Tensor) -> Var {
        self.push(output, Op::Custom(op, inputs))
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                acc(*a, gemm(g, false, self.value(*b), true));
                acc(*b, gemm(self.value(*a), true, g, false));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, column_sums(g));
            }
            Op::AddTiled(a, tile) => {
                acc(*a, g.clone());
                let l = self.value(*tile).rows();
                let mut gt = Tensor::zeros(l, g.cols());
                for i in 0..g.rows() {
                    for (o, x) in gt.row_mut(i % l).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                acc(*tile, gt);
            }
            Op::Scale(a, f) => acc(*a, g.map(|v| v * f)),
            Op::MulConst(a, f) => acc(*a, zip_map(g, f, |x, y| x * y)),
            Op::Gelu(a) => {
                let x = self.value(*a);
                acc(*a, zip_map(g, x, |gi, xi| gi * ops::gelu_grad(xi)));
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                acc(*a, zip_map(g, x, |gi, xi| gi * ops::sigmoid(xi)));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                rstd,
            } => {
                let gv = self.value(*gain).data();
                let (rows, cols) = (g.rows(), g.cols());
                let mut gx = Tensor::zeros(rows, cols);
                let mut gg = Tensor::zeros(1, cols);
                let mut gb = Tensor::zeros(1, cols);
                let mut dxhat = vec![0.0; cols];
                for r in 0..rows {
                    let (gr, nr) = (g.row(r), normalized.row(r));
                    for c in 0..cols {
                        dxhat[c] = gr[c] * gv[c];
                        gg.data_mut()[c] += gr[c] * nr[c];
                        gb.data_mut()[c] += gr[c];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                    let mean_dn = ops::dot(&dxhat, nr) / cols as f64;
                    for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = rstd[r] * (dxhat[c] - mean_d - nr[c] * mean_dn);
                    }
                }
                acc(*x, gx);
                acc(*gain, gg);
                acc(*bias, gb);
            }
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                probs,
            } => {
                let (gq, gk, gv) =
                    self.attention_backward(*q, *k, *v, *seq_len, *heads, probs, g);
                acc(*q, gq);
                acc(*k, gk);
                acc(*v, gv);
            }
            Op::SelectRows(a, indices) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for (r, &i) in indices.iter().enumerate() {
                    for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(*a, ga);
            }
            Op::Interleave(parts) => {
                let n = parts.len();
                let rows = g.rows() / n;
                for (j, &p) in parts.iter().enumerate() {
                    let mut gp = Tensor::zeros(rows, g.cols());
                    for b in 0..rows {
                        gp.row_mut(b).copy_from_slice(g.row(b * n + j));
                    }
                    acc(p, gp);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let gp = Tensor::from_fn(g.rows(), w, |r, c| g.get(r, offset + c));
                    acc(p, gp);
                    offset += w;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let s = g.item();
                let mut gl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    gl.row_mut(r)[t] -= 1.0;
                }
                gl.scale_assign(s);
                acc(*logits, gl);
            }
            Op::CosineLoss(u, v) => {
                let s = g.item();
                let (uv, vv) = (self.value(*u), self.value(*v));
                let mut gu = Tensor::zeros(uv.rows(), uv.cols());
                let mut gvv = Tensor::zeros(vv.rows(), vv.cols());
                for r in 0..uv.rows() {
                    let (du, dv) = ops::cosine_grad(uv.row(r), vv.row(r));
                    for c in 0..uv.cols() {
                        gu.set(r, c, -s * du[c]);
                        gvv.set(r, c, -s * dv[c]);
                    }
                }
                acc(*u, gu);
                acc(*v, gvv);
            }
            Op::Custom(op, inputs) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&i| self.value(i)).collect();
                let gs = op.backward(&ins, &node.value, g);
                assert_eq!(gs.len(), inputs.len(), "{} returned wrong arity", op.name());
                for (&i, gi) in inputs.iter().zip(gs) {
                    acc(i, gi);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
        probs: &[f64],
        g: &Tensor,
    ) -> (Tensor, Tensor, Tensor) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, d) = (qv.rows(), qv.cols());
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = Tensor::zeros(rows, d);
        let mut gk = Tensor::zeros(rows, d);
        let mut gv = Tensor::zeros(rows, d);
        let mut dp = vec![0.0; seq_len];
        for b in 0..rows / seq_len {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..seq_len {
                    let ri = b * seq_len + i;
                    let base = ((b * heads + h) * seq_len + i) * seq_len;
                    let p = &probs[base..base + seq_len];
                    let go = &g.row(ri)[cols.clone()];
                    for j in 0..seq_len {
                        let rj = b * seq_len + j;
                        dp[j] = ops::dot(go, &vv.row(rj)[cols.clone()]);
                        for (o, x) in gv.row_mut(rj)[cols.clone()].iter_mut().zip(go) {
                            *o += p[j] * x;
                        }
                    }
                    let pdp = ops::dot(p, &dp);
                    for j in 0..seq_len {
                        let rj = b * seq_len + j;
                        let ds = p[j] * (dp[j] - pdp) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = kv.row(rj)[cols.clone()].to_vec();
                        for (o, x) in gq.row_mut(ri)[cols.clone()].iter_mut().zip(&kj) {
                            *o += ds * x;
                        }
                        let qi = qv.row(ri)[cols.clone()].to_vec();
                        for (o, x) in gk.row_mut(rj)[cols.clone()].iter_mut().zip(&qi) {
                            *o += ds * x;
                        }
                    }
                }
            }
        }
        (gq, gk, gv)
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, x) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_fn(a.rows(), a.cols(), |r, c| f(a.get(r, c), b.get(r, c)))
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for parameters `0..count`, zero-filled where a parameter
    /// did not take part in the computation. Parameters registered more
    /// than once are summed.
    pub fn params(&self, graph: &Graph, shapes: &[[usize; 2]]) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s[0], s[1])).collect();
        for (i, node) in graph.nodes.iter().enumerate() {
            if let (Op::Param(p), Some(Some(g))) = (&node.op, self.grads.get(i)) {
                out[*p].add_assign(g);
            }
        }
        out
    }
}

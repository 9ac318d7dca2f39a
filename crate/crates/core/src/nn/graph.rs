//! Tape of matrix operations with reverse-mode gradients.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the tape
//! visits every node after all of its consumers. Parameters enter the tape
//! through [`Graph::param`]; [`Graph::backward`] adds their gradients into
//! the owning [`ParamStore`], accumulating across calls until the store is
//! zeroed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};

pub const LN_EPS: f64 = 1e-5;
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddTiled(Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Mask(Var, Tensor),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq: usize,
        probs: Vec<f64>,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        start: usize,
        stride: usize,
    },
    Bce {
        p: Var,
        targets: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    training: bool,
    rng: Option<ChaCha8Rng>,
}

impl Graph {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn eval() -> Self {
        Graph {
            nodes: Vec::new(),
            param_vars: Vec::new(),
            training: false,
            rng: None,
        }
    }

    /// Training-mode graph; dropout masks are drawn from `rng`.
    pub fn train(rng: ChaCha8Rng) -> Self {
        Graph {
            nodes: Vec::new(),
            param_vars: Vec::new(),
            training: true,
            rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Places a parameter on the tape once; later calls reuse the node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
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

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1);
        assert_eq!(r.cols(), self.value(a).cols());
        let r = r.data().to_vec();
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            for (x, b) in out.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Adds a constant block to each consecutive group of `c.rows()` rows.
    pub fn add_tiled(&mut self, a: Var, c: &Tensor) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.cols(), c.cols());
        assert_eq!(out.rows() % c.rows().max(1), 0);
        for i in 0..out.rows() {
            let src = c.row(i % c.rows());
            for (x, b) in out.row_mut(i).iter_mut().zip(src) {
                *x += b;
            }
        }
        self.push(out, Op::AddTiled(a))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape());
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data);
        self.push(out, Op::Mul(a, b))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    /// Inverted dropout; the identity outside training mode or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let (rows, cols) = self.value(a).shape();
        let rng = self.rng.as_mut().expect("training graph carries an rng");
        let mask: Vec<f64> = (0..rows * cols)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(rows, cols, mask);
        let x = self.value(a);
        let data = x.data().iter().zip(mask.data()).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(rows, cols, data);
        self.push(out, Op::Mask(a, mask))
    }

    /// Row-wise normalization to zero mean and unit variance followed by a
    /// per-column affine map; `gain` and `bias` are `1 x n`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        assert_eq!(g.len(), cols);
        let mut xhat = Tensor::zeros(rows, cols);
        let mut out = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Scaled dot-product attention applied independently to each block of
    /// `seq` rows and each of `heads` equal column groups.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, width) = qv.shape();
        assert_eq!(kv.shape(), (rows, width));
        assert_eq!(vv.shape(), (rows, width));
        assert!(heads > 0 && width % heads == 0 && seq > 0 && rows % seq == 0);
        let dk = width / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let blocks = rows / seq;
        let mut probs = vec![0.0; blocks * heads * seq * seq];
        let mut out = Tensor::zeros(rows, width);
        for b in 0..blocks {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * seq * seq..][..seq * seq];
                let c0 = h * dk;
                for i in 0..seq {
                    let qi = &qv.row(b * seq + i)[c0..c0 + dk];
                    let prow = &mut p[i * seq..(i + 1) * seq];
                    for (j, pj) in prow.iter_mut().enumerate() {
                        let kj = &kv.row(b * seq + j)[c0..c0 + dk];
                        *pj = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                    }
                    softmax_in_place(prow);
                    let orow = &mut out.row_mut(b * seq + i)[c0..c0 + dk];
                    for (j, pj) in prow.iter().enumerate() {
                        let vj = &vv.row(b * seq + j)[c0..c0 + dk];
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
                heads,
                seq,
                probs,
            },
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols());
        let mut out = Tensor::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let x = self.value(*p);
                assert_eq!(x.rows(), rows);
                out.row_mut(r)[c0..c0 + x.cols()].copy_from_slice(x.row(r));
                c0 += x.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Rows `start, start + stride, ...` of `a`, `count` of them.
    pub fn gather_rows(&mut self, a: Var, start: usize, stride: usize, count: usize) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(count, x.cols());
        for i in 0..count {
            out.row_mut(i).copy_from_slice(x.row(start + i * stride));
        }
        self.push(out, Op::GatherRows { x: a, start, stride })
    }

    /// Mean binary cross-entropy between probabilities `p` and (possibly
    /// smoothed) targets; probabilities are clamped to
    /// `[1e-7, 1 - 1e-7]`. Produces a `1 x 1` node.
    pub fn bce(&mut self, p: Var, targets: Tensor) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.shape(), targets.shape());
        let n = pv.len() as f64;
        let loss = pv
            .data()
            .iter()
            .zip(targets.data())
            .map(|(p, t)| {
                let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln())
            })
            .sum::<f64>()
            / n;
        self.push(Tensor::from_vec(1, 1, vec![loss]), Op::Bce { p, targets })
    }

    /// Reverse sweep from the scalar node `loss`; parameter gradients are
    /// added to `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => store.get_mut(*id).grad.add_assign(&g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, av);
                    gemm(&g, false, bv, true, ga, 1.0);
                    let gb = slot(&mut grads, *b, bv);
                    gemm(av, true, &g, false, gb, 1.0);
                }
                Op::Add(a, b) => {
                    slot(&mut grads, *a, self.value(*a)).add_assign(&g);
                    slot(&mut grads, *b, self.value(*b)).add_assign(&g);
                }
                Op::AddRow(a, row) => {
                    slot(&mut grads, *a, self.value(*a)).add_assign(&g);
                    let gr = slot(&mut grads, *row, self.value(*row));
                    for r in 0..g.rows() {
                        for (acc, x) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                }
                Op::AddTiled(a) => slot(&mut grads, *a, self.value(*a)).add_assign(&g),
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(slot(&mut grads, *a, av), &g, bv.data(), |gi, y| gi * y);
                    accumulate(slot(&mut grads, *b, bv), &g, av.data(), |gi, x| gi * x);
                }
                Op::Sigmoid(a) => {
                    let s = node.value.data();
                    accumulate(slot(&mut grads, *a, self.value(*a)), &g, s, |gi, s| {
                        gi * s * (1.0 - s)
                    });
                }
                Op::Tanh(a) => {
                    let t = node.value.data();
                    accumulate(slot(&mut grads, *a, self.value(*a)), &g, t, |gi, t| {
                        gi * (1.0 - t * t)
                    });
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let slope = *slope;
                    accumulate(slot(&mut grads, *a, x), &g, x.data(), |gi, x| {
                        if x > 0.0 {
                            gi
                        } else {
                            gi * slope
                        }
                    });
                }
                Op::Mask(a, mask) => {
                    accumulate(slot(&mut grads, *a, self.value(*a)), &g, mask.data(), |gi, m| {
                        gi * m
                    });
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain).data().to_vec();
                    let (rows, cols) = xhat.shape();
                    {
                        let gg = slot(&mut grads, *gain, self.value(*gain));
                        for r in 0..rows {
                            for c in 0..cols {
                                gg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                            }
                        }
                    }
                    {
                        let gb = slot(&mut grads, *bias, self.value(*bias));
                        for r in 0..rows {
                            for (acc, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                *acc += v;
                            }
                        }
                    }
                    let gx = slot(&mut grads, *x, self.value(*x));
                    let n = cols as f64;
                    for r in 0..rows {
                        let dxhat: Vec<f64> =
                            g.row(r).iter().zip(&gv).map(|(d, w)| d * w).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / n;
                        let mean_dx = dxhat
                            .iter()
                            .zip(xhat.row(r))
                            .map(|(d, h)| d * h)
                            .sum::<f64>()
                            / n;
                        for (c, acc) in gx.row_mut(r).iter_mut().enumerate() {
                            *acc += inv_std[r] * (dxhat[c] - mean_d - xhat.get(r, c) * mean_dx);
                        }
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    seq,
                    probs,
                } => {
                    let (gq, gk, gv) = self.attention_backward(&g, *q, *k, *v, *heads, *seq, probs);
                    slot(&mut grads, *q, self.value(*q)).add_assign(&gq);
                    slot(&mut grads, *k, self.value(*k)).add_assign(&gk);
                    slot(&mut grads, *v, self.value(*v)).add_assign(&gv);
                }
                Op::SliceCols(a, start) => {
                    let ga = slot(&mut grads, *a, self.value(*a));
                    for r in 0..g.rows() {
                        for (acc, x) in ga.row_mut(r)[*start..].iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let width = self.value(*p).cols();
                        let gp = slot(&mut grads, *p, self.value(*p));
                        for r in 0..g.rows() {
                            for (acc, x) in gp.row_mut(r).iter_mut().zip(&g.row(r)[c0..]) {
                                *acc += x;
                            }
                        }
                        c0 += width;
                    }
                }
                Op::GatherRows { x, start, stride } => {
                    let gx = slot(&mut grads, *x, self.value(*x));
                    for i in 0..g.rows() {
                        for (acc, v) in gx.row_mut(start + i * stride).iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                }
                Op::Bce { p, targets } => {
                    let pv = self.value(*p);
                    let n = pv.len() as f64;
                    let upstream = g.data()[0];
                    let gp = slot(&mut grads, *p, pv);
                    for ((acc, p), t) in gp.data_mut().iter_mut().zip(pv.data()).zip(targets.data())
                    {
                        if *p > PROB_CLAMP && *p < 1.0 - PROB_CLAMP {
                            *acc += upstream * ((1.0 - t) / (1.0 - p) - t / p) / n;
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &Tensor,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq: usize,
        probs: &[f64],
    ) -> (Tensor, Tensor, Tensor) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, width) = qv.shape();
        let dk = width / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut gq = Tensor::zeros(rows, width);
        let mut gk = Tensor::zeros(rows, width);
        let mut gv = Tensor::zeros(rows, width);
        let mut dp = vec![0.0; seq];
        for b in 0..rows / seq {
            for h in 0..heads {
                let p = &probs[(b * heads + h) * seq * seq..][..seq * seq];
                let c0 = h * dk;
                for i in 0..seq {
                    let gi = &g.row(b * seq + i)[c0..c0 + dk];
                    let prow = &p[i * seq..(i + 1) * seq];
                    for j in 0..seq {
                        let vj = &vv.row(b * seq + j)[c0..c0 + dk];
                        dp[j] = gi.iter().zip(vj).map(|(a, c)| a * c).sum();
                        let gvj = &mut gv.row_mut(b * seq + j)[c0..c0 + dk];
                        for (acc, x) in gvj.iter_mut().zip(gi) {
                            *acc += prow[j] * x;
                        }
                    }
                    let dot: f64 = dp.iter().zip(prow).map(|(d, p)| d * p).sum();
                    for j in 0..seq {
                        let ds = prow[j] * (dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = &kv.row(b * seq + j)[c0..c0 + dk];
                        let qi = &qv.row(b * seq + i)[c0..c0 + dk];
                        for (acc, x) in gq.row_mut(b * seq + i)[c0..c0 + dk].iter_mut().zip(kj) {
                            *acc += ds * x;
                        }
                        for (acc, x) in gk.row_mut(b * seq + j)[c0..c0 + dk].iter_mut().zip(qi) {
                            *acc += ds * x;
                        }
                    }
                }
            }
        }
        (gq, gk, gv)
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.rows(), like.cols()))
}

fn accumulate(acc: &mut Tensor, g: &Tensor, other: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((a, gi), o) in acc.data_mut().iter_mut().zip(g.data()).zip(other) {
        *a += f(*gi, *o);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

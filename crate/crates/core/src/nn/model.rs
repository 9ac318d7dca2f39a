//! Transformer-BiLSTM forecaster.
//!
//! Forward path for a batch of `B` windows stacked as `(B*L) x F` rows:
//!
//! ```text
//! embed -> + positional encoding -> LayerNorm -> multi-head attention
//!   (+ residual onto the normalized input) -> LayerNorm -> 3 x [linear,
//!   LayerNorm, LeakyReLU, dropout] -> linear (+ residual) -> BiLSTM
//!   -> [h_fwd(L) ; h_bwd(1)] -> linear to H*classes -> sigmoid
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub snb_hidden: [usize; 3],
    pub lstm_hidden: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub seq_len: usize,
    pub features: usize,
    pub horizon: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            heads: 8,
            snb_hidden: [128, 128, 128],
            lstm_hidden: 64,
            dropout: 0.1,
            leaky_slope: 0.01,
            seq_len: 15,
            features: 19,
            horizon: 14,
            classes: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_model,
            self.heads,
            self.lstm_hidden,
            self.seq_len,
            self.features,
            self.horizon,
            self.classes,
        ];
        if dims.contains(&0) || self.snb_hidden.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config("d_model must be even".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn outputs(&self) -> usize {
        self.horizon * self.classes
    }

    /// Closed-form scalar parameter count:
    ///
    /// ```text
    /// F*D + D                         embedding
    /// 2D + 2D                         two encoder layer norms
    /// 3*D*D + D*D + D                 Q, K, V (no bias) and output projection
    /// sum_k (n_{k-1}*n_k + n_k + 2n_k) three SNB blocks, n_0 = D
    /// n_3*D + D                       SNB output projection
    /// 2 * (D*4h + h*4h + 4h)          BiLSTM, two directions
    /// 2h*O + O                        head, O = H*classes
    /// ```
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let h = self.lstm_hidden;
        let o = self.outputs();
        let mut n = self.features * d + d;
        n += 4 * d;
        n += 4 * d * d + d;
        let mut prev = d;
        for &w in &self.snb_hidden {
            n += prev * w + w + 2 * w;
            prev = w;
        }
        n += prev * d + d;
        n += 2 * (d * 4 * h + h * 4 * h + 4 * h);
        n += 2 * h * o + o;
        n
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub out: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct SnbParams {
    pub norm: Norm,
    pub blocks: [(Linear, Norm); 3],
    pub out: Linear,
}

/// Gate columns are ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelParams {
    pub embed: Linear,
    pub norm1: Norm,
    pub attention: AttentionParams,
    pub snb: SnbParams,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    pub head: Linear,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub params: ModelParams,
}

fn linear(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Linear {
    Linear {
        weight: store.add_glorot(format!("{name}.weight"), fan_in, fan_out, rng),
        bias: store.add(format!("{name}.bias"), Tensor::zeros(1, fan_out)),
    }
}

fn norm(store: &mut ParamStore, name: &str, width: usize) -> Norm {
    Norm {
        gain: store.add(format!("{name}.gain"), Tensor::filled(1, width, 1.0)),
        bias: store.add(format!("{name}.bias"), Tensor::zeros(1, width)),
    }
}

fn lstm(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> LstmParams {
    let mut bias = Tensor::zeros(1, 4 * hidden);
    for c in hidden..2 * hidden {
        bias.set(0, c, 1.0);
    }
    LstmParams {
        w_ih: store.add_glorot(format!("{name}.w_ih"), input, 4 * hidden, rng),
        w_hh: store.add_glorot(format!("{name}.w_hh"), hidden, 4 * hidden, rng),
        bias: store.add(format!("{name}.bias"), bias),
    }
}

impl Model {
    /// Fresh model with Glorot-uniform weights, unit layer-norm gains, zero
    /// biases and a forget-gate bias of one.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let d = config.d_model;
        let embed = linear(&mut s, "embed", config.features, d, &mut rng);
        let norm1 = norm(&mut s, "encoder.norm1", d);
        let attention = AttentionParams {
            wq: s.add_glorot("attn.wq", d, d, &mut rng),
            wk: s.add_glorot("attn.wk", d, d, &mut rng),
            wv: s.add_glorot("attn.wv", d, d, &mut rng),
            out: linear(&mut s, "attn.out", d, d, &mut rng),
        };
        let snb_norm = norm(&mut s, "encoder.norm2", d);
        let mut prev = d;
        let mut blocks = Vec::with_capacity(3);
        for (k, &w) in config.snb_hidden.iter().enumerate() {
            let lin = linear(&mut s, &format!("snb.block{}.linear", k + 1), prev, w, &mut rng);
            let nrm = norm(&mut s, &format!("snb.block{}.norm", k + 1), w);
            blocks.push((lin, nrm));
            prev = w;
        }
        let snb = SnbParams {
            norm: snb_norm,
            blocks: [blocks[0], blocks[1], blocks[2]],
            out: linear(&mut s, "snb.out", prev, d, &mut rng),
        };
        let lstm_fwd = lstm(&mut s, "lstm.fwd", d, config.lstm_hidden, &mut rng);
        let lstm_bwd = lstm(&mut s, "lstm.bwd", d, config.lstm_hidden, &mut rng);
        let head = linear(&mut s, "head", 2 * config.lstm_hidden, config.outputs(), &mut rng);
        Ok(Model {
            config,
            store: s,
            params: ModelParams {
                embed,
                norm1,
                attention,
                snb,
                lstm_fwd,
                lstm_bwd,
                head,
            },
        })
    }
}

/// Sinusoidal encoding: `PE(p, 2i) = sin(p / 10000^(2i/D))` and
/// `PE(p, 2i+1) = cos(p / 10000^(2i/D))`.
pub fn positional_encoding(len: usize, d_model: usize) -> Result<Tensor> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding needs an even width, got {d_model}"
        )));
    }
    let mut pe = Tensor::zeros(len, d_model);
    for p in 0..len {
        for i in 0..d_model / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            pe.set(p, 2 * i, angle.sin());
            pe.set(p, 2 * i + 1, angle.cos());
        }
    }
    Ok(pe)
}

fn apply_linear(g: &mut Graph, store: &ParamStore, x: Var, lin: Linear) -> Var {
    let w = g.param(store, lin.weight);
    let b = g.param(store, lin.bias);
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

fn apply_norm(g: &mut Graph, store: &ParamStore, x: Var, n: Norm) -> Var {
    let gain = g.param(store, n.gain);
    let bias = g.param(store, n.bias);
    g.layer_norm(x, gain, bias)
}

/// Multi-head self-attention over blocks of `seq` rows, projected and added
/// back onto its input.
pub fn mha_forward(
    g: &mut Graph,
    store: &ParamStore,
    e_norm: Var,
    p: &AttentionParams,
    heads: usize,
    seq: usize,
) -> Var {
    let wq = g.param(store, p.wq);
    let wk = g.param(store, p.wk);
    let wv = g.param(store, p.wv);
    let q = g.matmul(e_norm, wq);
    let k = g.matmul(e_norm, wk);
    let v = g.matmul(e_norm, wv);
    let heads_out = g.attention(q, k, v, heads, seq);
    let projected = apply_linear(g, store, heads_out, p.out);
    g.add(e_norm, projected)
}

/// Sequential neural blocks with the residual onto `theta`.
pub fn snb_forward(
    g: &mut Graph,
    store: &ParamStore,
    theta: Var,
    p: &SnbParams,
    dropout: f64,
    slope: f64,
) -> Var {
    let mut z = apply_norm(g, store, theta, p.norm);
    for (lin, nrm) in p.blocks {
        let a = apply_linear(g, store, z, lin);
        let a = apply_norm(g, store, a, nrm);
        let a = g.leaky_relu(a, slope);
        z = g.dropout(a, dropout);
    }
    let zeta4 = apply_linear(g, store, z, p.out);
    g.add(theta, zeta4)
}

fn lstm_direction(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    p: &LstmParams,
    batch: usize,
    seq: usize,
    hidden: usize,
    reverse: bool,
) -> Var {
    let w_ih = g.param(store, p.w_ih);
    let w_hh = g.param(store, p.w_hh);
    let bias = g.param(store, p.bias);
    let projected = g.matmul(x, w_ih);
    let projected = g.add_row(projected, bias);
    let mut state: Option<(Var, Var)> = None;
    let steps: Vec<usize> = if reverse {
        (0..seq).rev().collect()
    } else {
        (0..seq).collect()
    };
    for t in steps {
        let mut gates = g.gather_rows(projected, t, seq, batch);
        if let Some((h, _)) = state {
            let rec = g.matmul(h, w_hh);
            gates = g.add(gates, rec);
        }
        let i = g.slice_cols(gates, 0, hidden);
        let f = g.slice_cols(gates, hidden, hidden);
        let c_hat = g.slice_cols(gates, 2 * hidden, hidden);
        let o = g.slice_cols(gates, 3 * hidden, hidden);
        let i = g.sigmoid(i);
        let o = g.sigmoid(o);
        let c_hat = g.tanh(c_hat);
        let mut c = g.mul(i, c_hat);
        if let Some((_, c_prev)) = state {
            let f = g.sigmoid(f);
            let kept = g.mul(f, c_prev);
            c = g.add(kept, c);
        }
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        state = Some((h, c));
    }
    state.expect("sequence is non-empty").0
}

/// Runs both LSTM directions over blocks of `seq` rows and concatenates the
/// forward state after the last step with the backward state after the
/// first step: `batch x 2*hidden`.
pub fn bilstm_forward(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    fwd: &LstmParams,
    bwd: &LstmParams,
    seq: usize,
    hidden: usize,
) -> Var {
    let batch = g.value(x).rows() / seq;
    let h_fwd = lstm_direction(g, store, x, fwd, batch, seq, hidden, false);
    let h_bwd = lstm_direction(g, store, x, bwd, batch, seq, hidden, true);
    g.concat_cols(&[h_fwd, h_bwd])
}

/// Stacks windows into one `(B*L) x F` tensor.
pub fn stack_inputs(inputs: &[&Tensor]) -> Tensor {
    let rows: usize = inputs.iter().map(|t| t.rows()).sum();
    let cols = inputs.first().map_or(0, |t| t.cols());
    let mut data = Vec::with_capacity(rows * cols);
    for t in inputs {
        assert_eq!(t.cols(), cols);
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(rows, cols, data)
}

pub struct ForwardOutput {
    pub logits: Var,
    pub probs: Var,
}

/// Full forward pass; returns `B x (H*classes)` logits and probabilities,
/// row `b` holding horizon-major blocks of `classes` columns.
pub fn model_forward(g: &mut Graph, model: &Model, inputs: &[&Tensor]) -> Result<ForwardOutput> {
    let cfg = &model.config;
    for x in inputs {
        if x.shape() != (cfg.seq_len, cfg.features) {
            return Err(Error::Shape(format!(
                "input window is {}x{}, model expects {}x{}",
                x.rows(),
                x.cols(),
                cfg.seq_len,
                cfg.features
            )));
        }
    }
    if inputs.is_empty() {
        return Err(Error::Empty("forward pass on an empty batch".into()));
    }
    let store = &model.store;
    let p = &model.params;
    let x = g.input(stack_inputs(inputs));
    let embedded = apply_linear(g, store, x, p.embed);
    let pe = positional_encoding(cfg.seq_len, cfg.d_model)?;
    let embedded = g.add_tiled(embedded, &pe);
    let e_norm = apply_norm(g, store, embedded, p.norm1);
    let theta = mha_forward(g, store, e_norm, &p.attention, cfg.heads, cfg.seq_len);
    let encoded = snb_forward(g, store, theta, &p.snb, cfg.dropout, cfg.leaky_slope);
    let h_t = bilstm_forward(
        g,
        store,
        encoded,
        &p.lstm_fwd,
        &p.lstm_bwd,
        cfg.seq_len,
        cfg.lstm_hidden,
    );
    let logits = apply_linear(g, store, h_t, p.head);
    let probs = g.sigmoid(logits);
    Ok(ForwardOutput { logits, probs })
}

/// Evaluation-mode probabilities, one `H x classes` tensor per window.
pub fn predict(model: &Model, inputs: &[&Tensor]) -> Result<Vec<Tensor>> {
    let mut g = Graph::eval();
    let out = model_forward(&mut g, model, inputs)?;
    let probs = g.value(out.probs);
    if !probs.is_finite() {
        return Err(Error::Numerical("non-finite probabilities".into()));
    }
    let (h, c) = (model.config.horizon, model.config.classes);
    Ok((0..probs.rows())
        .map(|r| Tensor::from_vec(h, c, probs.row(r).to_vec()))
        .collect())
}

pub fn training_graph(seed: u64) -> Graph {
    Graph::train(ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            heads: 8,
            snb_hidden: [6, 5, 4],
            lstm_hidden: 3,
            dropout: 0.1,
            leaky_slope: 0.01,
            seq_len: 5,
            features: 6,
            horizon: 2,
            classes: 5,
        }
    }

    fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(15, 64).unwrap();
        for i in 0..32 {
            assert_eq!(pe.get(0, 2 * i), 0.0);
            assert_eq!(pe.get(0, 2 * i + 1), 1.0);
        }
        assert!((pe.get(1, 0) - 0.841_470_984_8).abs() < 1e-9);
        assert!(positional_encoding(3, 7).is_err());
    }

    #[test]
    fn layer_norm_hand_values() {
        let mut s = ParamStore::new();
        let gain = s.add("g", Tensor::filled(1, 2, 1.0));
        let bias = s.add("b", Tensor::zeros(1, 2));
        let mut g = Graph::eval();
        let x = g.input(Tensor::from_rows(&[vec![-1.0, 1.0], vec![3.0, 3.0]]));
        let (gv, bv) = (g.param(&s, gain), g.param(&s, bias));
        let y = g.layer_norm(x, gv, bv);
        let out = g.value(y);
        assert!((out.get(0, 0) + 1.0).abs() < 1e-5 && (out.get(0, 1) - 1.0).abs() < 1e-5);
        assert_eq!(out.row(1), &[0.0, 0.0]);

        let mut s = ParamStore::new();
        let gain = s.add("g", Tensor::filled(1, 4, 1.0));
        let bias = s.add("b", Tensor::filled(1, 4, 0.3));
        let mut g = Graph::eval();
        let (gv, bv) = (g.param(&s, gain), g.param(&s, bias));
        let x = g.input(Tensor::from_rows(&[vec![0.2, -3.0, 4.0, 1.0]]));
        let y = g.layer_norm(x, gv, bv);
        let mean = g.value(y).data().iter().sum::<f64>() / 4.0;
        assert!((mean - 0.3).abs() < 1e-6);
    }

    /// Single-head attention from explicit loops.
    fn brute_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
        let n = q.rows();
        let d = q.cols();
        let mut out = Tensor::zeros(n, v.cols());
        for i in 0..n {
            let mut w = vec![0.0; n];
            for j in 0..n {
                let mut s = 0.0;
                for c in 0..d {
                    s += q.get(i, c) * k.get(j, c);
                }
                w[j] = s / (d as f64).sqrt();
            }
            let m = w.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = w.iter().map(|x| (x - m).exp()).sum();
            for j in 0..n {
                let a = (w[j] - m).exp() / z;
                for c in 0..v.cols() {
                    out.set(i, c, out.get(i, c) + a * v.get(j, c));
                }
            }
        }
        out
    }

    #[test]
    fn attention_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // single step returns V
        let mut g = Graph::eval();
        let q = g.input(random_tensor(1, 4, &mut rng));
        let k = g.input(random_tensor(1, 4, &mut rng));
        let vt = random_tensor(1, 4, &mut rng);
        let v = g.input(vt.clone());
        let out = g.attention(q, k, v, 1, 1);
        assert_eq!(g.value(out), &vt);

        // identical keys give uniform weights
        let mut g = Graph::eval();
        let q = g.input(random_tensor(2, 4, &mut rng));
        let key = random_tensor(1, 4, &mut rng);
        let k = g.input(Tensor::from_rows(&[key.row(0).to_vec(), key.row(0).to_vec()]));
        let v = g.input(Tensor::from_rows(&[vec![1.0, 0.0, 2.0, 4.0], vec![3.0, 2.0, 0.0, 0.0]]));
        let out = g.attention(q, k, v, 1, 2);
        assert_eq!(g.value(out).row(0), &[2.0, 1.0, 1.0, 2.0]);

        // random 3x4 against brute force
        let (qt, kt, vt) = (
            random_tensor(3, 4, &mut rng),
            random_tensor(3, 4, &mut rng),
            random_tensor(3, 4, &mut rng),
        );
        let mut g = Graph::eval();
        let (q, k, v) = (g.input(qt.clone()), g.input(kt.clone()), g.input(vt.clone()));
        let out = g.attention(q, k, v, 1, 3);
        let expected = brute_attention(&qt, &kt, &vt);
        for (a, b) in g.value(out).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-9);
        }

        // two heads split columns
        let mut g = Graph::eval();
        let (q, k, v) = (g.input(qt.clone()), g.input(kt.clone()), g.input(vt.clone()));
        let out = g.attention(q, k, v, 2, 3);
        let cols = |t: &Tensor, c0: usize| {
            Tensor::from_rows(&(0..3).map(|r| t.row(r)[c0..c0 + 2].to_vec()).collect::<Vec<_>>())
        };
        for h in 0..2 {
            let e = brute_attention(&cols(&qt, 2 * h), &cols(&kt, 2 * h), &cols(&vt, 2 * h));
            let got = cols(g.value(out), 2 * h);
            for (a, b) in got.data().iter().zip(e.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    fn zero_params(store: &mut ParamStore, ids: &[ParamId]) {
        for id in ids {
            store.get_mut(*id).value.data_mut().fill(0.0);
        }
    }

    #[test]
    fn residual_passthroughs() {
        let mut model = Model::new(toy_config(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input = random_tensor(10, 8, &mut rng);
        let p = model.params;
        zero_params(&mut model.store, &[p.attention.out.weight, p.attention.out.bias]);
        let mut g = Graph::eval();
        let x = g.input(input.clone());
        let theta = mha_forward(&mut g, &model.store, x, &p.attention, 8, 5);
        assert_eq!(g.value(theta), &input);

        let mut ids = vec![p.snb.out.weight, p.snb.out.bias];
        for (lin, _) in p.snb.blocks {
            ids.extend([lin.weight, lin.bias]);
        }
        zero_params(&mut model.store, &ids);
        let mut g = training_graph(4);
        let x = g.input(input.clone());
        let out = snb_forward(&mut g, &model.store, x, &p.snb, 0.1, 0.01);
        assert_eq!(g.value(out), &input);
    }

    #[test]
    fn mha_is_permutation_equivariant() {
        let model = Model::new(toy_config(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input = random_tensor(5, 8, &mut rng);
        let mut swapped = input.clone();
        swapped.row_mut(1).copy_from_slice(input.row(3));
        swapped.row_mut(3).copy_from_slice(input.row(1));
        let run = |t: &Tensor| {
            let mut g = Graph::eval();
            let x = g.input(t.clone());
            let y = mha_forward(&mut g, &model.store, x, &model.params.attention, 8, 5);
            g.value(y).clone()
        };
        let (a, b) = (run(&input), run(&swapped));
        assert_eq!(a.shape(), (5, 8));
        for (r, s) in [(0, 0), (1, 3), (2, 2), (3, 1), (4, 4)] {
            for (x, y) in a.row(r).iter().zip(b.row(s)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn snb_eval_is_deterministic_and_leaky() {
        let model = Model::new(toy_config(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_tensor(5, 8, &mut rng);
        let run = || {
            let mut g = Graph::eval();
            let x = g.input(input.clone());
            let y = snb_forward(&mut g, &model.store, x, &model.params.snb, 0.1, 0.01);
            g.value(y).clone()
        };
        assert_eq!(run(), run());

        let mut g = Graph::eval();
        let x = g.input(Tensor::from_vec(1, 2, vec![-1.0, 2.0]));
        let y = g.leaky_relu(x, 0.01);
        assert_eq!(g.value(y).data(), &[-0.01, 2.0]);
    }

    #[test]
    fn bilstm_shapes_and_zero_weights() {
        let cfg = ModelConfig::default();
        let mut model = Model::new(cfg.clone(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_tensor(2 * 15, 64, &mut rng);
        let p = model.params;
        let mut g = Graph::eval();
        let x = g.input(input.clone());
        let h = bilstm_forward(&mut g, &model.store, x, &p.lstm_fwd, &p.lstm_bwd, 15, 64);
        assert_eq!(g.value(h).shape(), (2, 128));

        zero_params(
            &mut model.store,
            &[p.lstm_fwd.w_ih, p.lstm_fwd.w_hh, p.lstm_fwd.bias, p.lstm_bwd.w_ih, p.lstm_bwd.w_hh, p.lstm_bwd.bias],
        );
        let mut g = Graph::eval();
        let x = g.input(input);
        let h = bilstm_forward(&mut g, &model.store, x, &p.lstm_fwd, &p.lstm_bwd, 15, 64);
        assert!(g.value(h).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_step_lstm_matches_hand_cell() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lp = lstm(&mut s, "l", 3, 2, &mut rng);
        let lb = lstm(&mut s, "r", 3, 2, &mut rng);
        let xt = random_tensor(1, 3, &mut rng);
        let mut g = Graph::eval();
        let x = g.input(xt.clone());
        let h = bilstm_forward(&mut g, &s, x, &lp, &lb, 1, 2);

        let cell = |p: &LstmParams| {
            let z = xt.matmul(&s.get(p.w_ih).value);
            let b = &s.get(p.bias).value;
            let a = |c: usize| z.get(0, c) + b.get(0, c);
            let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
            (0..2)
                .map(|j| {
                    let c = sig(a(j)) * a(4 + j).tanh();
                    sig(a(6 + j)) * c.tanh()
                })
                .collect::<Vec<_>>()
        };
        let mut expected = cell(&lp);
        expected.extend(cell(&lb));
        for (a, b) in g.value(h).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_shapes_and_ranges() {
        let model = Model::new(ModelConfig::default(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(15, 19, &mut rng);
        let probs = predict(&model, &[&x, &x]).unwrap();
        assert_eq!(probs.len(), 2);
        assert_eq!(probs[0].shape(), (14, 5));
        assert_eq!(probs[0], probs[1]);
        assert!(probs[0].data().iter().all(|p| *p > 0.0 && *p < 1.0));

        let bad = random_tensor(14, 19, &mut rng);
        assert!(predict(&model, &[&bad]).is_err());
    }

    #[test]
    fn parameter_count_formula() {
        for cfg in [ModelConfig::default(), toy_config()] {
            let model = Model::new(cfg.clone(), 0).unwrap();
            assert_eq!(model.store.scalar_count(), cfg.parameter_count());
        }
        // hand evaluation for the default configuration
        let d = 64;
        let expected = 19 * d + d
            + 4 * d
            + 4 * d * d + d
            + (d * 128 + 3 * 128) + 2 * (128 * 128 + 3 * 128)
            + 128 * d + d
            + 2 * (d * 256 + 64 * 256 + 256)
            + 128 * 70 + 70;
        assert_eq!(ModelConfig::default().parameter_count(), expected);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        c.heads = 7;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }
}

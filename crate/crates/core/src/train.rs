//! Loss, AdamW, warm-restart schedule, clipping and the training loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{mix_seed, SequenceSample};
use crate::error::{Error, Result};
use crate::eval::{binarize, micro_metrics, DEFAULT_THRESHOLD};
use crate::io::write_atomic;
use crate::nn::graph::PROB_CLAMP;
use crate::nn::model::{model_forward, training_graph};
use crate::nn::{predict, Model, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epochs per cosine cycle.
    pub restart_period: f64,
    /// `lr_min = lr * lr_min_ratio`.
    pub lr_min_ratio: f64,
    pub clip_norm: f64,
    pub label_smoothing: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Shuffling and dropout seed; a run config supplies it from its own
    /// top-level seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            weight_decay: 0.09,
            epochs: 70,
            restart_period: 5.0,
            lr_min_ratio: 0.01,
            clip_norm: 3.0,
            label_smoothing: 0.05,
            batch_size: 32,
            patience: 10,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("restart_period", self.restart_period),
            ("clip_norm", self.clip_norm),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("train.{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("train.weight_decay must be non-negative".into()));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::Config("train.label_smoothing must be in [0, 0.5)".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_min_ratio) {
            return Err(Error::Config("train.lr_min_ratio must be in [0, 1]".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("train.beta1/beta2 must be in [0, 1)".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("train.epochs, batch_size and patience must be positive".into()));
        }
        Ok(())
    }
}

/// `y' = y (1 - eps) + eps / 2`.
pub fn smooth_targets(targets: &[u8], eps: f64) -> Vec<f64> {
    targets.iter().map(|y| *y as f64 * (1.0 - eps) + eps / 2.0).collect()
}

/// Mean binary cross-entropy against smoothed targets, probabilities
/// clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(probs: &[f64], targets: &[u8], eps: f64) -> Result<f64> {
    if probs.len() != targets.len() || probs.is_empty() {
        return Err(Error::Shape(format!(
            "{} probabilities vs {} targets",
            probs.len(),
            targets.len()
        )));
    }
    let n = probs.len() as f64;
    Ok(probs
        .iter()
        .zip(smooth_targets(targets, eps))
        .map(|(p, t)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n)
}

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        AdamState { step: 0, m: zeros(), v: zeros() }
    }
}

/// One AdamW update from the gradients held in `store`. Weight decay is
/// applied to the parameter before the adaptive step.
pub fn adamw_step(store: &mut ParamStore, state: &mut AdamState, lr: f64, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let (theta, grad) = (p.value.data_mut(), p.grad.data());
        for k in 0..theta.len() {
            let g = grad[k];
            theta[k] -= lr * cfg.weight_decay * theta[k];
            let mk = &mut m.data_mut()[k];
            *mk = cfg.beta1 * *mk + (1.0 - cfg.beta1) * g;
            let mh = *mk / bc1;
            let vk = &mut v.data_mut()[k];
            *vk = cfg.beta2 * *vk + (1.0 - cfg.beta2) * g * g;
            let vh = *vk / bc2;
            theta[k] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Cosine annealing with warm restarts every `restart_period` epochs;
/// `epoch` may be fractional.
pub fn lr_schedule(epoch: f64, cfg: &TrainConfig) -> f64 {
    let lr_max = cfg.lr;
    let lr_min = cfg.lr * cfg.lr_min_ratio;
    let tau = epoch.rem_euclid(cfg.restart_period);
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * tau / cfg.restart_period).cos())
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm {
        let k = max_norm / norm;
        for p in store.iter_mut() {
            p.grad.scale(k);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters of the best validation epoch (the last epoch when there is
    /// no validation data).
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

const PREDICT_CHUNK: usize = 256;

/// Probabilities for every sample, `H x classes` each.
pub fn predict_samples(model: &Model, samples: &[SequenceSample]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(PREDICT_CHUNK) {
        let inputs: Vec<&Tensor> = chunk.iter().map(|s| &s.x).collect();
        out.extend(predict(model, &inputs)?);
    }
    Ok(out)
}

/// Micro-F1 over all label slots at the default threshold.
pub fn micro_f1(model: &Model, samples: &[SequenceSample]) -> Result<f64> {
    let probs = predict_samples(model, samples)?;
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for (p, s) in probs.iter().zip(samples) {
        preds.extend(binarize(p.data(), DEFAULT_THRESHOLD));
        targets.extend_from_slice(&s.y);
    }
    Ok(micro_metrics(&preds, &targets).f1)
}

fn train_batch(
    model: &mut Model,
    batch: &[&SequenceSample],
    graph_seed: u64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut g = training_graph(graph_seed);
    let inputs: Vec<&Tensor> = batch.iter().map(|s| &s.x).collect();
    let out = model_forward(&mut g, model, &inputs)?;
    let cols = model.config.outputs();
    let mut targets = Vec::with_capacity(batch.len() * cols);
    for s in batch {
        if s.y.len() != cols {
            return Err(Error::Shape(format!("sample has {} targets, model {}", s.y.len(), cols)));
        }
        targets.extend(smooth_targets(&s.y, cfg.label_smoothing));
    }
    let loss = g.bce(out.probs, Tensor::from_vec(batch.len(), cols, targets));
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Numerical("training loss is not finite".into()));
    }
    model.store.zero_grad();
    g.backward(loss, &mut model.store);
    Ok(value)
}

/// Mini-batch training with per-epoch validation and best-state retention.
pub fn fit(
    train: &[SequenceSample],
    val: &[SequenceSample],
    mut model: Model,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split has no samples".into()));
    }
    let mut state = AdamState::new(&model.store);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let n_batches = train.len().div_ceil(cfg.batch_size);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let lr = lr_schedule(epoch as f64 + b as f64 / n_batches as f64, cfg);
            let batch: Vec<&SequenceSample> = idx.iter().map(|i| &train[*i]).collect();
            let graph_seed = mix_seed(cfg.seed ^ 0xD50F_u64, (epoch * n_batches + b) as u64);
            total += train_batch(&mut model, &batch, graph_seed, cfg)? * batch.len() as f64;
            clip_gradients(&mut model.store, cfg.clip_norm);
            adamw_step(&mut model.store, &mut state, lr, cfg);
        }
        if !model.store.all_finite() {
            return Err(Error::Numerical(format!("non-finite parameters after epoch {}", epoch + 1)));
        }
        let val_f1 = if val.is_empty() { None } else { Some(micro_f1(&model, val)?) };
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: total / train.len() as f64,
            lr: lr_schedule(epoch as f64, cfg),
            val_f1,
        };
        log::info!(
            "epoch {} loss {:.5} lr {:.2e} val_f1 {}",
            record.epoch,
            record.loss,
            record.lr,
            val_f1.map_or("-".into(), |f| format!("{f:.4}"))
        );
        history.push(record);
        if let Some(f1) = val_f1 {
            if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                best = Some((f1, epoch + 1, model.store.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, store)) => {
            model.store = store;
            epoch
        }
        None => history.len(),
    };
    Ok(FitResult { model, history, best_epoch })
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,lr,val_f1\n");
    for r in history {
        let f1 = r.val_f1.map_or_else(String::new, |f| format!("{f:.6}"));
        let _ = writeln!(out, "{},{:.8},{:.8e},{}", r.epoch, r.loss, r.lr, f1);
    }
    out
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    write_atomic(path, history_csv(history).as_bytes())
}

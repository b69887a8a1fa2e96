//! Training loop: decoupled-weight-decay Adam with bias correction,
//! global-norm gradient clipping, weighted cross entropy with inverse-
//! frequency class weights, reduce-on-plateau learning rate, and early
//! stopping on validation loss. All randomness is seeded; rerunning a fit
//! reproduces the history byte for byte (wall-clock timings aside).

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{Real, Tape, Tensor};
use crate::error::{Error, Result};
use crate::models::{Model, ParamSet};

/// One training example: a T x F feature matrix, its observation mask,
/// and a class label.
#[derive(Debug, Clone)]
pub struct Sample {
    pub x: Tensor<f32>,
    pub obs_mask: Vec<bool>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub improvement_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            batch_size: 128,
            max_epochs: 50,
            patience: 6,
            plateau_patience: 2,
            lr_factor: 0.5,
            min_lr: 1e-5,
            improvement_eps: 1e-5,
            seed: 0,
        }
    }
}

/// Inverse-frequency class weights: w_c = N / (K * N_c).
pub fn compute_class_weights(labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        if y >= num_classes {
            return Err(Error::Train(format!("label {y} out of {num_classes} classes")));
        }
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(c, &nc)| {
            if nc == 0 {
                Err(Error::Train(format!("class {c} has no training samples")))
            } else {
                Ok(n / (num_classes as f64 * nc as f64))
            }
        })
        .collect()
}

/// Adam with decoupled weight decay and bias correction.
pub struct AdamW<R> {
    step: usize,
    m: Vec<Tensor<R>>,
    v: Vec<Tensor<R>>,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<R: Real> AdamW<R> {
    pub fn new(params: &ParamSet<R>, cfg: &TrainConfig) -> Self {
        AdamW {
            step: 0,
            m: params
                .entries
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape.clone()))
                .collect(),
            v: params
                .entries
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape.clone()))
                .collect(),
            weight_decay: cfg.weight_decay,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<R>, grads: &[Tensor<R>], lr: f64) {
        assert_eq!(params.entries.len(), grads.len());
        self.step += 1;
        let t = self.step as i32;
        let b1 = R::from_f64(self.beta1);
        let b2 = R::from_f64(self.beta2);
        let one = R::one();
        let bc1 = R::from_f64(1.0 - self.beta1.powi(t));
        let bc2 = R::from_f64(1.0 - self.beta2.powi(t));
        let rlr = R::from_f64(lr);
        let eps = R::from_f64(self.eps);
        let decay = R::from_f64(lr * self.weight_decay);
        for ((param, grad), (m, v)) in params
            .entries
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let p = &mut param.1;
            for i in 0..p.data.len() {
                let g = grad.data[i];
                m.data[i] = b1 * m.data[i] + (one - b1) * g;
                v.data[i] = b2 * v.data[i] + (one - b2) * g * g;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] =
                    p.data[i] - rlr * mhat / (vhat.sqrt() + eps) - decay * p.data[i];
            }
        }
    }
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<R: Real>(grads: &mut [Tensor<R>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = R::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for v in &mut g.data {
                *v = *v * scale;
            }
        }
    }
    norm
}

/// Plateau / early-stop bookkeeping over validation losses.
#[derive(Debug, Clone)]
pub struct LoopState {
    pub best: f64,
    pub best_epoch: usize,
    pub lr: f64,
    epochs_since_improve: usize,
    epochs_since_plateau: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopDecision {
    pub improved: bool,
    pub reduced_lr: bool,
    pub stop: bool,
}

impl LoopState {
    pub fn new(lr: f64) -> Self {
        LoopState {
            best: f64::INFINITY,
            best_epoch: 0,
            lr,
            epochs_since_improve: 0,
            epochs_since_plateau: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64, cfg: &TrainConfig) -> LoopDecision {
        let improved = val_loss < self.best - cfg.improvement_eps;
        let mut reduced_lr = false;
        if improved {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.epochs_since_improve = 0;
            self.epochs_since_plateau = 0;
        } else {
            self.epochs_since_improve += 1;
            self.epochs_since_plateau += 1;
            if self.epochs_since_plateau >= cfg.plateau_patience {
                let next = (self.lr * cfg.lr_factor).max(cfg.min_lr);
                reduced_lr = next < self.lr;
                self.lr = next;
                self.epochs_since_plateau = 0;
            }
        }
        LoopDecision {
            improved,
            reduced_lr,
            stop: self.epochs_since_improve >= cfg.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,lr,seconds\n");
    for r in history {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6e},{:.3}\n",
            r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds
        ));
    }
    s
}

/// Weighted mean cross entropy of `model` over `samples` (no dropout).
pub fn weighted_loss(model: &Model<f32>, samples: &[Sample], class_weights: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for s in samples {
        let logits = model.logits(&s.x, &s.obs_mask);
        let w = class_weights[s.label];
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
        total += w * (lse - logits[s.label]);
        wsum += w;
    }
    if wsum > 0.0 {
        total / wsum
    } else {
        0.0
    }
}

/// One optimization step over a batch: per-sample backward passes with
/// gradient accumulation, normalized by the sum of sample weights.
/// Returns the batch loss.
fn batch_step(
    model: &mut Model<f32>,
    opt: &mut AdamW<f32>,
    batch: &[&Sample],
    class_weights: &[f64],
    lr: f64,
    clip_norm: f64,
    dropout_rng: &mut ChaCha8Rng,
) -> f64 {
    let wsum: f64 = batch.iter().map(|s| class_weights[s.label]).sum();
    let mut acc: Vec<Tensor<f32>> = model
        .params
        .entries
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape.clone()))
        .collect();
    let mut loss_sum = 0.0;
    for s in batch {
        let mut tape: Tape<f32> = Tape::new();
        let pvars = model.leaf_params(&mut tape);
        let logits = model.forward_on_tape(&mut tape, &pvars, &s.x, &s.obs_mask, true, dropout_rng);
        let loss = tape.cross_entropy_weighted(logits, s.label, class_weights[s.label]);
        loss_sum += tape.value(loss).item() as f64;
        let grads = tape.backward(loss);
        for ((_, pv), slot) in pvars.iter().zip(acc.iter_mut()) {
            if let Some(g) = tape.grad_of(&grads, pv) {
                slot.add_assign(&g);
            }
        }
    }
    let inv = (1.0 / wsum) as f32;
    for g in &mut acc {
        for v in &mut g.data {
            *v *= inv;
        }
    }
    clip_global_norm(&mut acc, clip_norm);
    opt.step(&mut model.params, &acc, lr);
    loss_sum / wsum
}

/// Train `model` in place. On return the parameters are those of the best
/// validation epoch.
pub fn fit(
    model: &mut Model<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<FitReport> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Train("empty train or validation set".into()));
    }
    let labels: Vec<usize> = train_set.iter().map(|s| s.label).collect();
    let class_weights = compute_class_weights(&labels, model.config.num_classes)?;

    let mut opt = AdamW::new(&model.params, cfg);
    let mut state = LoopState::new(cfg.lr);
    let mut history = Vec::new();
    let mut best_params = model.params.clone();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e3779b9).wrapping_mul(epoch as u64 + 1));

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = batch_step(
                model,
                &mut opt,
                &batch,
                &class_weights,
                state.lr,
                cfg.clip_norm,
                &mut dropout_rng,
            );
            if !loss.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite training loss at epoch {epoch} (lr {:.3e}); aborting",
                    state.lr
                )));
            }
            epoch_loss += loss;
            batches += 1;
        }
        let train_loss = epoch_loss / batches as f64;
        let val_loss = weighted_loss(model, val_set, &class_weights);
        if !val_loss.is_finite() {
            return Err(Error::Train(format!(
                "non-finite validation loss at epoch {epoch}; aborting"
            )));
        }

        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: state.lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(cb) = progress.as_mut() {
            cb(&record);
        }
        history.push(record);

        let decision = state.observe(epoch, val_loss, cfg);
        if decision.improved {
            best_params = model.params.clone();
        }
        if decision.stop {
            stopped_early = true;
            break;
        }
    }

    model.params = best_params;
    Ok(FitReport {
        history,
        best_epoch: state.best_epoch,
        best_val_loss: state.best,
        stopped_early,
    })
}

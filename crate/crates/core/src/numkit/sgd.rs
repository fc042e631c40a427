//! Mini-batch SGD with momentum and a step learning-rate schedule.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::MlpModel;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    #[serde(default)]
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl SgdConfig {
    /// Victim schedule: momentum 0.5, LR 0.1 decayed ×0.1 every 30 epochs, 200 epochs.
    pub fn victim_default() -> Self {
        Self {
            base_lr: 0.1,
            momentum: 0.5,
            lr_decay_factor: 0.1,
            lr_decay_every: 30,
            weight_decay: 0.0,
            epochs: 200,
            batch_size: 64,
        }
    }

    /// Thief member schedule: momentum 0.9, decayed ×0.1 every 30 epochs, 200 epochs.
    pub fn member_default(base_lr: f64) -> Self {
        Self {
            base_lr,
            momentum: 0.9,
            lr_decay_factor: 0.1,
            lr_decay_every: 30,
            weight_decay: 0.0,
            epochs: 200,
            batch_size: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("base_lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::config("lr_decay_factor must lie in (0, 1]"));
        }
        if self.lr_decay_every == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "lr_decay_every, epochs and batch_size must be positive",
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be nonnegative"));
        }
        Ok(())
    }

    /// `base_lr · factor^⌊epoch / every⌋`
    pub fn effective_lr(&self, epoch: usize) -> f64 {
        self.base_lr * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// Velocity buffer for heavy-ball updates: `v ← μv + g + λθ`, `θ ← θ − ηv`.
#[derive(Debug, Clone)]
pub(crate) struct Momentum {
    velocity: Vec<f64>,
    momentum: f64,
    weight_decay: f64,
}

impl Momentum {
    pub(crate) fn new(n_params: usize, cfg: &SgdConfig) -> Self {
        Self {
            velocity: vec![0.0; n_params],
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            let g = if wd != 0.0 { g + wd * *p } else { *g };
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
}

/// Visiting order for one epoch, seeded by `seed ⊕ epoch`.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(seed ^ epoch as u64));
    order
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Minimizes mean softmax cross-entropy over `(rows, labels)`.
pub fn train_supervised(
    mut model: MlpModel,
    rows: &[&[f64]],
    labels: &[usize],
    cfg: &SgdConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::input("no training samples"));
    }
    if rows.len() != labels.len() {
        return Err(Error::input("rows and labels differ in length"));
    }
    let mut opt = Momentum::new(model.parameters().len(), cfg);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut batch_rows: Vec<&[f64]> = Vec::with_capacity(cfg.batch_size);
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        let lr = cfg.effective_lr(epoch);
        let order = epoch_order(rows.len(), seed, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch_rows.clear();
            batch_labels.clear();
            for &i in chunk {
                batch_rows.push(rows[i]);
                batch_labels.push(labels[i]);
            }
            let (loss, grad) = model.loss_and_grad(&batch_rows, &batch_labels)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            total += loss * chunk.len() as f64;
            opt.step(model.parameters_mut(), &grad, lr);
        }
        trace.push(total / rows.len() as f64);
        model.advance_epochs(1);
    }
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}

/// Fraction of rows whose predicted label equals the given label.
pub fn accuracy(model: &MlpModel, rows: &[&[f64]], labels: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::input("empty evaluation set"));
    }
    let mut hits = 0usize;
    for (x, &y) in rows.iter().zip(labels) {
        if model.predict_label(x)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / rows.len() as f64)
}

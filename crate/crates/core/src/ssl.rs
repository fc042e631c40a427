//! Pseudo-labeling stage run after the query budget is spent.
//!
//! A sample earns a pseudo-label when the members agree on it, keep their
//! labels under a weak perturbation (up to `max_label_changes` exceptions)
//! and are each at least `confidence_threshold` sure. The ensemble is then
//! fine-tuned on queried samples plus strongly perturbed pseudo-labeled ones.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapool::{strong_augment, weak_augment, AugmentConfig, PoolState, SampleStatus};
use crate::ensemble::{self, EnsembleState};
use crate::error::{Error, Result};
use crate::numkit::{argmax, epoch_order, MlpModel, Momentum, SgdConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SslConfig {
    #[serde(default = "defaults::threshold")]
    pub confidence_threshold: f64,
    #[serde(default = "defaults::changes")]
    pub max_label_changes: usize,
    #[serde(default = "defaults::cap")]
    pub per_class_cap: usize,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::batch")]
    pub batch_size: usize,
    #[serde(default = "AugmentConfig::tabular_default")]
    pub augment: AugmentConfig,
}

mod defaults {
    pub fn threshold() -> f64 {
        0.9
    }
    pub fn changes() -> usize {
        1
    }
    pub fn cap() -> usize {
        100
    }
    pub fn lambda() -> f64 {
        1.0
    }
    pub fn lr() -> f64 {
        0.002
    }
    pub fn epochs() -> usize {
        30
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn batch() -> usize {
        32
    }
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: defaults::threshold(),
            max_label_changes: defaults::changes(),
            per_class_cap: defaults::cap(),
            lambda: defaults::lambda(),
            lr: defaults::lr(),
            epochs: defaults::epochs(),
            momentum: defaults::momentum(),
            batch_size: defaults::batch(),
            augment: AugmentConfig::tabular_default(),
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.confidence_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::config("confidence_threshold must lie in (0, 1]"));
        }
        if self.per_class_cap == 0 {
            return Err(Error::config("per_class_cap must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda must be nonnegative"));
        }
        self.optimizer().validate()?;
        self.augment.validate()
    }

    /// Constant-rate optimizer settings used by [`ssl_train`].
    pub fn optimizer(&self) -> SgdConfig {
        SgdConfig {
            base_lr: self.lr,
            momentum: self.momentum,
            lr_decay_factor: 1.0,
            lr_decay_every: self.epochs.max(1),
            weight_decay: 0.0,
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }
}

/// Per-sample evidence behind a filter decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    /// Members whose label on the weak view differs from the original.
    pub changes: usize,
    /// Label shared by every member on the original input, if any.
    pub unanimous: Option<usize>,
    /// Smallest top-class probability across members on the original input.
    pub min_confidence: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub selected: BTreeMap<usize, usize>,
    pub audit: BTreeMap<usize, Audit>,
}

impl FilterOutcome {
    pub fn confidences(&self) -> BTreeMap<usize, f64> {
        self.selected
            .keys()
            .map(|&i| (i, self.audit[&i].min_confidence))
            .collect()
    }
}

/// Seed of the weak view of pool sample `index`.
pub fn weak_view_seed(seed: u64, index: usize) -> u64 {
    rng::derive(seed, index as u64)
}

/// Weak view of pool sample `index`, drawn from [`weak_view_seed`].
pub fn weak_view(pool: &PoolState, index: usize, cfg: &SslConfig, seed: u64) -> Result<Vec<f64>> {
    let data = pool.dataset();
    let mut draw = rng::rng(weak_view_seed(seed, index));
    weak_augment(data.row(index), data.layout(), &cfg.augment.weak, &mut draw)
}

/// Judges one sample from each member's distribution on the original and
/// the weak view.
pub fn judge(original: &[Vec<f64>], weak: &[Vec<f64>], cfg: &SslConfig) -> Audit {
    let labels: Vec<usize> = original.iter().map(|p| argmax(p)).collect();
    let changes = weak
        .iter()
        .zip(&labels)
        .filter(|(p, &l)| argmax(p) != l)
        .count();
    let unanimous = labels
        .first()
        .copied()
        .filter(|&y| labels.iter().all(|&l| l == y));
    let min_confidence = original
        .iter()
        .zip(&labels)
        .map(|(p, &l)| p[l])
        .fold(f64::INFINITY, f64::min);
    let selected = changes <= cfg.max_label_changes
        && unanimous.is_some()
        && min_confidence >= cfg.confidence_threshold;
    Audit {
        changes,
        unanimous,
        min_confidence,
        selected,
    }
}

/// Runs the stability, unanimity and confidence guards over every unlabeled
/// sample using the best checkpoints.
pub fn ssl_filter(state: &EnsembleState, pool: &PoolState, cfg: &SslConfig, seed: u64) -> Result<FilterOutcome> {
    cfg.validate()?;
    let candidates = pool.unlabeled();
    let audits: Vec<(usize, Audit)> = candidates
        .par_iter()
        .map(|&i| {
            let original = ensemble::member_probs(state, pool.dataset().row(i))?;
            let weak = ensemble::member_probs(state, &weak_view(pool, i, cfg, seed)?)?;
            Ok((i, judge(&original, &weak, cfg)))
        })
        .collect::<Result<_>>()?;
    let mut out = FilterOutcome::default();
    for (i, a) in audits {
        if a.selected {
            out.selected.insert(i, a.unanimous.expect("selected samples are unanimous"));
        }
        out.audit.insert(i, a);
    }
    Ok(out)
}

/// Keeps at most `cap` samples per class, most confident first, lower index
/// on ties.
pub fn apply_class_cap(
    selected: &BTreeMap<usize, usize>,
    confidences: &BTreeMap<usize, f64>,
    cap: usize,
) -> BTreeMap<usize, usize> {
    let mut by_class: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for (&i, &y) in selected {
        let c = confidences.get(&i).copied().unwrap_or(f64::NEG_INFINITY);
        by_class.entry(y).or_default().push((i, c));
    }
    let mut out = BTreeMap::new();
    for (y, mut items) in by_class {
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (i, _) in items.into_iter().take(cap) {
            out.insert(i, y);
        }
    }
    out
}

/// Per-member loss traces from [`ssl_train`]; each entry is
/// `(labeled, pseudo, labeled + λ·pseudo)` mean losses for one epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SslTrace {
    pub members: Vec<Vec<(f64, f64, f64)>>,
}

/// Fine-tunes each member's best checkpoint on queried plus pseudo-labeled
/// samples and offers the result as a new best checkpoint.
pub fn ssl_train(state: &mut EnsembleState, pool: &PoolState, cfg: &SslConfig, seed: u64) -> Result<SslTrace> {
    cfg.validate()?;
    if pool.pseudo_labels().is_empty() {
        log::warn!("pseudo-label set is empty; skipping semi-supervised training");
        return Ok(SslTrace::default());
    }
    let (l_rows, l_labels) = pool.labeled_rows(pool.queried_labels());
    if l_rows.is_empty() {
        return Err(Error::input("no queried samples to train on"));
    }
    let pseudo: Vec<(usize, usize)> = pool.pseudo_labels().iter().map(|(&i, &y)| (i, y)).collect();
    let aug_seed = rng::derive(seed, 0x5eed);
    let starts: Vec<MlpModel> = state.best.iter().map(|c| c.model.clone()).collect();

    let results: Vec<(MlpModel, Vec<(f64, f64, f64)>, f64)> = starts
        .into_par_iter()
        .enumerate()
        .map(|(m, model)| {
            let order_seed = rng::derive(seed, m as u64);
            let (model, trace) =
                train_member(model, &l_rows, &l_labels, pool, &pseudo, cfg, order_seed, aug_seed)
                    .map_err(|e| e.in_member(m))?;
            let acc = ensemble::validation_accuracy(&model, pool).map_err(|e| e.in_member(m))?;
            Ok((model, trace, acc))
        })
        .collect::<Result<_>>()?;

    state.cycle += 1;
    let mut traces = Vec::with_capacity(results.len());
    for (m, (model, trace, acc)) in results.into_iter().enumerate() {
        state.offer(m, &model, acc);
        state.current[m] = model;
        traces.push(trace);
    }
    Ok(SslTrace { members: traces })
}

/// The ensemble-independent training loop. Each step pairs one labeled batch
/// of `batch_size` with one pseudo batch sized so both sets are traversed
/// once per epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_member(
    mut model: MlpModel,
    l_rows: &[&[f64]],
    l_labels: &[usize],
    pool: &PoolState,
    pseudo: &[(usize, usize)],
    cfg: &SslConfig,
    order_seed: u64,
    aug_seed: u64,
) -> Result<(MlpModel, Vec<(f64, f64, f64)>)> {
    let opt_cfg = cfg.optimizer();
    let mut opt = Momentum::new(model.parameters().len(), &opt_cfg);
    let data = pool.dataset();
    let fill = data.mean_value();
    let b = cfg.batch_size;
    let n_steps = l_rows.len().div_ceil(b);
    let pb = pseudo.len().div_ceil(n_steps).max(1);
    let use_pseudo = cfg.lambda != 0.0 && !pseudo.is_empty();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut rows: Vec<&[f64]> = Vec::with_capacity(b);
    let mut labels: Vec<usize> = Vec::with_capacity(b.max(pb));

    for epoch in 0..cfg.epochs {
        let l_order = epoch_order(l_rows.len(), order_seed, epoch);
        let p_order = epoch_order(pseudo.len(), rng::derive(order_seed, 1), epoch);
        let (mut l_total, mut p_total) = (0.0, 0.0);
        for (s, chunk) in l_order.chunks(b).enumerate() {
            rows.clear();
            labels.clear();
            for &i in chunk {
                rows.push(l_rows[i]);
                labels.push(l_labels[i]);
            }
            let (loss, mut grad) = model.loss_and_grad(&rows, &labels)?;
            l_total += loss * chunk.len() as f64;

            let p_chunk = p_order.get(s * pb..((s + 1) * pb).min(p_order.len())).unwrap_or(&[]);
            if use_pseudo && !p_chunk.is_empty() {
                let mut views = Vec::with_capacity(p_chunk.len());
                labels.clear();
                for &j in p_chunk {
                    let (idx, y) = pseudo[j];
                    let mut draw = rng::rng(rng::derive2(aug_seed, epoch as u64, idx as u64));
                    views.push(strong_augment(data.row(idx), data.layout(), &cfg.augment.strong, fill, &mut draw)?);
                    labels.push(y);
                }
                let refs: Vec<&[f64]> = views.iter().map(Vec::as_slice).collect();
                let (p_loss, p_grad) = model.loss_and_grad(&refs, &labels)?;
                p_total += p_loss * p_chunk.len() as f64;
                for (g, pg) in grad.iter_mut().zip(&p_grad) {
                    *g += cfg.lambda * pg;
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            opt.step(model.parameters_mut(), &grad, cfg.lr);
        }
        let l_mean = l_total / l_rows.len() as f64;
        let p_mean = if use_pseudo { p_total / pseudo.len() as f64 } else { 0.0 };
        let total = combined_loss(l_mean, p_mean, cfg.lambda);
        if !total.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        trace.push((l_mean, p_mean, total));
        model.advance_epochs(1);
    }
    Ok((model, trace))
}

/// `labeled + λ · pseudo`
pub fn combined_loss(labeled: f64, pseudo: f64, lambda: f64) -> f64 {
    labeled + lambda * pseudo
}

pub const PSEUDO_HEADER: &str = "sample_index,pseudo_label,min_confidence,changes";

/// Writes the pseudo-labeled set with its audit fields.
pub fn write_pseudo<W: Write>(mut w: W, pseudo: &BTreeMap<usize, usize>, audit: &BTreeMap<usize, Audit>) -> Result<()> {
    writeln!(w, "{PSEUDO_HEADER}")?;
    for (&i, &y) in pseudo {
        let a = audit.get(&i);
        writeln!(
            w,
            "{i},{y},{},{}",
            a.map_or(f64::NAN, |a| a.min_confidence),
            a.map_or(0, |a| a.changes)
        )?;
    }
    Ok(())
}

/// Pseudo-label count per class.
pub fn class_histogram(pseudo: &BTreeMap<usize, usize>, num_classes: usize) -> Vec<usize> {
    let mut h = vec![0usize; num_classes];
    for &y in pseudo.values() {
        if y < num_classes {
            h[y] += 1;
        }
    }
    h
}

/// Filter, cap and record the pseudo-labels in the pool. Returns the audit.
pub fn assign_pseudo_labels(
    state: &EnsembleState,
    pool: &mut PoolState,
    cfg: &SslConfig,
    seed: u64,
) -> Result<FilterOutcome> {
    let mut out = ssl_filter(state, pool, cfg, seed)?;
    let capped = apply_class_cap(&out.selected, &out.confidences(), cfg.per_class_cap);
    pool.clear_pseudo();
    pool.assign(&capped, SampleStatus::Pseudo)?;
    out.selected = capped;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SslConfig {
        SslConfig::default()
    }

    fn onehotish(label: usize, conf: f64) -> Vec<f64> {
        let mut p = vec![(1.0 - conf) / 2.0; 3];
        p[label] = conf;
        p
    }

    #[test]
    fn one_change_is_tolerated() {
        let orig: Vec<_> = [0.95, 0.92, 0.97, 0.99, 0.93].iter().map(|&c| onehotish(2, c)).collect();
        let mut weak = orig.clone();
        weak[1] = onehotish(0, 0.8);
        let a = judge(&orig, &weak, &cfg());
        assert_eq!((a.changes, a.unanimous, a.selected), (1, Some(2), true));
        assert!((a.min_confidence - 0.92).abs() < 1e-15);
    }

    #[test]
    fn two_changes_reject() {
        let orig: Vec<_> = (0..5).map(|_| onehotish(1, 0.99)).collect();
        let mut weak = orig.clone();
        weak[0] = onehotish(0, 0.9);
        weak[4] = onehotish(2, 0.9);
        let a = judge(&orig, &weak, &cfg());
        assert_eq!(a.changes, 2);
        assert!(!a.selected);
    }

    #[test]
    fn low_confidence_rejects() {
        let mut orig: Vec<_> = (0..5).map(|_| onehotish(1, 0.99)).collect();
        orig[3] = onehotish(1, 0.85);
        let a = judge(&orig, &orig, &cfg());
        assert_eq!(a.unanimous, Some(1));
        assert!(!a.selected);
    }

    #[test]
    fn cap_prefers_confidence() {
        let selected: BTreeMap<usize, usize> = (0..150).map(|i| (i, 4)).collect();
        let conf: BTreeMap<usize, f64> = (0..150).map(|i| (i, ((i * 37) % 150) as f64 / 150.0)).collect();
        let kept = apply_class_cap(&selected, &conf, 100);
        assert_eq!(kept.len(), 100);
        let floor = kept.keys().map(|i| conf[i]).fold(f64::INFINITY, f64::min);
        let dropped_max = conf
            .iter()
            .filter(|(i, _)| !kept.contains_key(i))
            .map(|(_, &c)| c)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(floor > dropped_max);

        let few: BTreeMap<usize, usize> = [(3, 0), (9, 0), (12, 0)].into_iter().collect();
        assert_eq!(apply_class_cap(&few, &BTreeMap::new(), 100), few);
    }

    #[test]
    fn loss_combination() {
        assert_eq!(combined_loss(0.5, 0.25, 1.0), 0.75);
        assert_eq!(SslConfig::default().lr, 0.002);
    }
}

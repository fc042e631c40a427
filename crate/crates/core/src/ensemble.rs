//! Heterogeneous thief ensemble: per-cycle training with best-checkpoint
//! tracking, consensus and disagreement statistics, majority voting.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapool::PoolState;
use crate::error::{Error, Result};
use crate::numkit::{self, argmax, MlpModel, MlpSpec, SgdConfig};
use crate::rng;

/// Hidden-layer widths of the default five members, smallest first.
pub const DESK_PROFILE: [&[usize]; 5] = [&[8], &[32], &[64, 64], &[128, 64], &[256, 128, 64]];

/// Position of the victim architecture inside [`DESK_PROFILE`].
pub const DESK_VICTIM_INDEX: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSpec {
    pub model: MlpSpec,
    pub sgd: SgdConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub members: Vec<MemberSpec>,
    pub shared_victim_arch_index: usize,
}

impl EnsembleSpec {
    /// Five members on [`DESK_PROFILE`]. The member at [`DESK_VICTIM_INDEX`]
    /// takes `victim` verbatim, initialization seed included; the others get
    /// seeds derived from `seed`. Learning rate is 0.01 for the smallest
    /// member and 0.02 for the rest.
    pub fn desk_default(victim: &MlpSpec, epochs: usize, decay_every: usize, seed: u64) -> Self {
        let members = DESK_PROFILE
            .iter()
            .enumerate()
            .map(|(i, hidden)| {
                let model = if i == DESK_VICTIM_INDEX {
                    victim.clone()
                } else {
                    MlpSpec::new(victim.input_dim, hidden.to_vec(), victim.num_classes)
                        .with_activation(victim.activation)
                        .with_seed(rng::derive(seed, i as u64))
                };
                let lr = if i == 0 { 0.01 } else { 0.02 };
                let mut sgd = SgdConfig::member_default(lr);
                sgd.epochs = epochs;
                sgd.lr_decay_every = decay_every;
                MemberSpec { model, sgd }
            })
            .collect();
        Self {
            members,
            shared_victim_arch_index: DESK_VICTIM_INDEX,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::config("an ensemble needs at least two members"));
        }
        if self.shared_victim_arch_index >= self.members.len() {
            return Err(Error::config("shared_victim_arch_index out of range"));
        }
        let first = &self.members[0].model;
        for (i, m) in self.members.iter().enumerate() {
            m.model.validate().map_err(|e| e.in_member(i))?;
            m.sgd.validate().map_err(|e| e.in_member(i))?;
            if m.model.input_dim != first.input_dim || m.model.num_classes != first.num_classes {
                return Err(Error::config(format!(
                    "member {i} disagrees with member 0 on input or class count"
                )));
            }
        }
        for i in 0..self.members.len() {
            for j in i + 1..self.members.len() {
                if self.members[i].model.hidden_layers == self.members[j].model.hidden_layers {
                    return Err(Error::config(format!(
                        "members {i} and {j} share the same architecture"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub validation_accuracy: f64,
    /// Cycle that produced this checkpoint (0 = untrained initialization).
    pub cycle: usize,
}

#[derive(Debug, Clone)]
pub struct EnsembleState {
    spec: EnsembleSpec,
    initial: Vec<MlpModel>,
    pub current: Vec<MlpModel>,
    pub best: Vec<Checkpoint>,
    pub cycle: usize,
}

impl EnsembleState {
    pub fn new(spec: EnsembleSpec) -> Result<Self> {
        spec.validate()?;
        let initial = spec
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| MlpModel::new(m.model.clone()).map_err(|e| e.in_member(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parts(spec, initial.clone(), initial))
    }

    /// State whose best checkpoints are the given models.
    pub fn from_models(spec: EnsembleSpec, models: Vec<MlpModel>) -> Result<Self> {
        spec.validate()?;
        if models.len() != spec.len() {
            return Err(Error::input("one model per member is required"));
        }
        let initial = spec
            .members
            .iter()
            .map(|m| MlpModel::new(m.model.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parts(spec, initial, models))
    }

    fn from_parts(spec: EnsembleSpec, initial: Vec<MlpModel>, best: Vec<MlpModel>) -> Self {
        Self {
            spec,
            current: best.clone(),
            best: best
                .into_iter()
                .map(|model| Checkpoint {
                    model,
                    validation_accuracy: 0.0,
                    cycle: 0,
                })
                .collect(),
            initial,
            cycle: 0,
        }
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.best.len()
    }

    pub fn is_empty(&self) -> bool {
        self.best.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.members[0].model.num_classes
    }

    pub fn best_models(&self) -> Vec<&MlpModel> {
        self.best.iter().map(|c| &c.model).collect()
    }

    /// Replaces the best checkpoint of `member` when `acc` ties or beats it.
    pub(crate) fn offer(&mut self, member: usize, model: &MlpModel, acc: f64) {
        let cur = &mut self.best[member];
        if acc >= cur.validation_accuracy {
            *cur = Checkpoint {
                model: model.clone(),
                validation_accuracy: acc,
                cycle: self.cycle,
            };
        }
    }

    /// Writes `member_<i>.aotm` per member plus `index.txt`
    /// (`<spec fingerprint> <validation accuracy> <cycle>` per line).
    pub fn save_checkpoints(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut index = String::new();
        for (i, (c, m)) in self.best.iter().zip(&self.spec.members).enumerate() {
            numkit::save_model(&c.model, dir.join(format!("member_{i}.aotm")))?;
            writeln!(index, "{} {} {}", m.model.fingerprint(), c.validation_accuracy, c.cycle)
                .expect("writing to a String");
        }
        std::fs::write(dir.join("index.txt"), index)?;
        Ok(())
    }
}

/// Reads a checkpoint directory written by [`EnsembleState::save_checkpoints`].
pub fn load_checkpoints(dir: impl AsRef<Path>) -> Result<Vec<(String, Checkpoint)>> {
    let dir = dir.as_ref();
    let index = std::fs::read_to_string(dir.join("index.txt"))?;
    index
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let mut parts = line.split_whitespace();
            let (Some(fp), Some(acc), Some(cycle), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Format(format!("index.txt line {}: expected 3 fields", i + 1)));
            };
            let acc: f64 = acc
                .parse()
                .map_err(|_| Error::Format(format!("index.txt line {}: bad accuracy", i + 1)))?;
            let cycle: usize = cycle
                .parse()
                .map_err(|_| Error::Format(format!("index.txt line {}: bad cycle", i + 1)))?;
            let model = numkit::load_model(dir.join(format!("member_{i}.aotm")))?;
            Ok((
                fp.to_string(),
                Checkpoint {
                    model,
                    validation_accuracy: acc,
                    cycle,
                },
            ))
        })
        .collect()
}

/// Fraction of validation samples whose victim label the model reproduces;
/// 0 when there is no validation set.
pub fn validation_accuracy(model: &MlpModel, pool: &PoolState) -> Result<f64> {
    let val = pool.validation_labels();
    if val.is_empty() {
        return Ok(0.0);
    }
    let (rows, labels) = pool.labeled_rows(val);
    numkit::accuracy(model, &rows, &labels)
}

/// Retrains every member from its initial parameters on all queried samples,
/// scores it on the validation set and updates the best checkpoints.
pub fn train_cycle(state: &mut EnsembleState, pool: &PoolState, seed: u64) -> Result<()> {
    let queried = pool.queried_labels();
    if queried.is_empty() {
        return Err(Error::input("no queried samples to train on"));
    }
    let (rows, labels) = pool.labeled_rows(queried);
    let cycle = state.cycle + 1;
    let trained: Vec<(MlpModel, f64)> = state
        .initial
        .par_iter()
        .zip(&state.spec.members)
        .enumerate()
        .map(|(i, (init, member))| {
            let member_seed = rng::derive2(seed, cycle as u64, i as u64);
            let out = numkit::train_supervised(init.clone(), &rows, &labels, &member.sgd, member_seed)
                .and_then(|o| Ok((validation_accuracy(&o.model, pool)?, o.model)))
                .map_err(|e| e.in_member(i))?;
            Ok((out.1, out.0))
        })
        .collect::<Result<_>>()?;
    state.cycle = cycle;
    for (i, (model, acc)) in trained.into_iter().enumerate() {
        state.offer(i, &model, acc);
        state.current[i] = model;
    }
    Ok(())
}

/// Softmax output of every member's best checkpoint, in member order.
pub fn member_probs(state: &EnsembleState, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    state
        .best
        .iter()
        .enumerate()
        .map(|(i, c)| c.model.softmax_probs(x).map_err(|e| e.in_member(i)))
        .collect()
}

/// Hard label of every member's best checkpoint.
pub fn member_labels(state: &EnsembleState, x: &[f64]) -> Result<Vec<usize>> {
    Ok(member_probs(state, x)?.iter().map(|p| argmax(p)).collect())
}

/// Coordinate-wise mean of the member distributions, computed as a running
/// mean over each coordinate's sorted values. The result does not depend on
/// member order and reproduces `p` exactly when every member outputs `p`.
pub fn consensus_mean(probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = probs.first() else {
        return Err(Error::input("no distributions to average"));
    };
    let n = first.len();
    if probs.iter().any(|p| p.len() != n) {
        return Err(Error::input("distributions differ in length"));
    }
    let mut column = Vec::with_capacity(probs.len());
    Ok((0..n)
        .map(|c| {
            column.clear();
            column.extend(probs.iter().map(|p| p[c]));
            column.sort_by(f64::total_cmp);
            let mut m = column[0];
            for (j, &v) in column.iter().enumerate().skip(1) {
                m += (v - m) / (j + 1) as f64;
            }
            m
        })
        .collect())
}

/// Per-class share of member votes.
pub fn disagreement_vector(labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::input("no member labels"));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| Error::input(format!("label {l} out of range for {num_classes} classes")))? += 1;
    }
    let k = labels.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / k).collect())
}

/// Label chosen by a strict majority (`⌊k/2⌋ + 1` votes); without one, the
/// argmax of `consensus`.
pub fn majority_vote(labels: &[usize], consensus: &[f64]) -> Result<usize> {
    if labels.is_empty() {
        return Err(Error::input("no member labels"));
    }
    let n = consensus.len();
    let mut counts = vec![0usize; n];
    for &l in labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| Error::input(format!("label {l} out of range for {n} classes")))? += 1;
    }
    let need = labels.len() / 2 + 1;
    Ok(counts
        .iter()
        .position(|&c| c >= need)
        .unwrap_or_else(|| argmax(consensus)))
}

/// Majority-vote label of the ensemble's best checkpoints.
pub fn ensemble_predict(state: &EnsembleState, x: &[f64]) -> Result<usize> {
    let probs = member_probs(state, x)?;
    let labels: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    majority_vote(&labels, &consensus_mean(&probs)?)
}

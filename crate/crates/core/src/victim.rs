//! The black-box victim. Attacker code reaches victim labels only through
//! [`VictimOracle`], which answers with hard labels and charges every answer
//! against a [`QueryBudget`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datapool::{Dataset, PoolState, SampleStatus};
use crate::error::{Error, Result};
use crate::netvictim::RemoteVictim;
use crate::numkit::{self, MlpModel, MlpSpec, SgdConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBudget {
    total: usize,
    spent: usize,
}

impl QueryBudget {
    pub fn new(total: usize) -> Self {
        Self { total, spent: 0 }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn spent(&self) -> usize {
        self.spent
    }

    pub fn remaining(&self) -> usize {
        self.total - self.spent
    }

    /// Charges `n` queries, or fails without charging anything.
    pub fn try_spend(&mut self, n: usize) -> Result<()> {
        if n > self.remaining() {
            return Err(Error::BudgetExhausted {
                requested: n,
                remaining: self.remaining(),
            });
        }
        self.spent += n;
        Ok(())
    }
}

/// Anything that maps a feature row to a single class label.
pub trait HardLabel {
    fn hard_label(&self, x: &[f64]) -> Result<usize>;
}

impl HardLabel for MlpModel {
    fn hard_label(&self, x: &[f64]) -> Result<usize> {
        self.predict_label(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub sample_hash: u64,
    pub label: usize,
}

/// First eight bytes of SHA-256 over the row's little-endian `f64` encoding.
pub fn sample_hash(x: &[f64]) -> u64 {
    let mut h = Sha256::new();
    for v in x {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub enum VictimBackend {
    InProcess(MlpModel),
    Remote(RemoteVictim),
}

pub struct VictimOracle {
    backend: VictimBackend,
    budget: QueryBudget,
    log: Vec<QueryRecord>,
}

impl VictimOracle {
    pub fn in_process(model: MlpModel, total: usize) -> Self {
        Self {
            backend: VictimBackend::InProcess(model),
            budget: QueryBudget::new(total),
            log: Vec::new(),
        }
    }

    /// Oracle backed by a remote service. The local ledger mirrors `total`;
    /// the service enforces its own budget as well.
    pub fn remote(client: RemoteVictim, total: usize) -> Self {
        Self {
            backend: VictimBackend::Remote(client),
            budget: QueryBudget::new(total),
            log: Vec::new(),
        }
    }

    pub fn budget(&self) -> QueryBudget {
        self.budget
    }

    pub fn budget_remaining(&self) -> usize {
        self.budget.remaining()
    }

    pub fn query_log(&self) -> &[QueryRecord] {
        &self.log
    }

    /// Labels raw rows, charging one unit per row. All-or-nothing.
    pub fn query_rows(&mut self, rows: &[&[f64]]) -> Result<Vec<usize>> {
        if rows.len() > self.budget.remaining() {
            return Err(Error::BudgetExhausted {
                requested: rows.len(),
                remaining: self.budget.remaining(),
            });
        }
        let labels = match &mut self.backend {
            VictimBackend::InProcess(model) => rows
                .iter()
                .map(|x| model.predict_label(x))
                .collect::<Result<Vec<_>>>()?,
            VictimBackend::Remote(client) => client.labels(rows)?,
        };
        self.budget.try_spend(rows.len())?;
        self.log.extend(rows.iter().zip(&labels).map(|(x, &label)| QueryRecord {
            sample_hash: sample_hash(x),
            label,
        }));
        Ok(labels)
    }

    /// Queries unlabeled pool samples and marks them as queried.
    pub fn query_labels(&mut self, indices: &[usize], pool: &mut PoolState) -> Result<BTreeMap<usize, usize>> {
        self.query_into(indices, pool, SampleStatus::Queried)
    }

    /// Same as [`query_labels`](Self::query_labels) but files the samples as validation.
    pub fn query_validation(
        &mut self,
        indices: &[usize],
        pool: &mut PoolState,
    ) -> Result<BTreeMap<usize, usize>> {
        self.query_into(indices, pool, SampleStatus::Validation)
    }

    fn query_into(
        &mut self,
        indices: &[usize],
        pool: &mut PoolState,
        status: SampleStatus,
    ) -> Result<BTreeMap<usize, usize>> {
        pool.check_unlabeled(indices)?;
        let rows: Vec<&[f64]> = indices.iter().map(|&i| pool.dataset().row(i)).collect();
        let labels = self.query_rows(&rows)?;
        let map: BTreeMap<usize, usize> = indices.iter().copied().zip(labels).collect();
        pool.assign(&map, status)?;
        Ok(map)
    }
}

/// Free-function form of [`VictimOracle::budget_remaining`].
pub fn budget_remaining(oracle: &VictimOracle) -> usize {
    oracle.budget_remaining()
}

/// Trains the victim on a labeled dataset.
pub fn train_victim(data: &Dataset, spec: MlpSpec, cfg: &SgdConfig, seed: u64) -> Result<TrainOutcome> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::input("victim training data must be labeled"))?;
    if spec.input_dim != data.dim() {
        return Err(Error::config(format!(
            "victim input_dim {} does not match data dimension {}",
            spec.input_dim,
            data.dim()
        )));
    }
    let rows: Vec<&[f64]> = data.rows().collect();
    numkit::train_supervised(MlpModel::new(spec)?, &rows, labels, cfg, seed)
}

/// Accuracy of any hard-label source against the dataset's ground truth.
pub fn labeled_accuracy(model: &dyn HardLabel, data: &Dataset) -> Result<f64> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::input("evaluation data must be labeled"))?;
    let mut hits = 0usize;
    for (x, &y) in data.rows().zip(labels) {
        hits += usize::from(model.hard_label(x)? == y);
    }
    Ok(hits as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapool::Layout;

    fn toy_pool(n: usize) -> PoolState {
        let feats: Vec<f64> = (0..n * 2).map(|i| (i as f64).sin()).collect();
        PoolState::new(Dataset::new(feats, 2, None, Layout::Tabular).unwrap())
    }

    fn toy_oracle(total: usize) -> VictimOracle {
        let model = MlpModel::new(MlpSpec::new(2, vec![4], 3).with_seed(1)).unwrap();
        VictimOracle::in_process(model, total)
    }

    #[test]
    fn ledger_arithmetic() {
        let mut oracle = toy_oracle(300);
        assert_eq!(budget_remaining(&oracle), 300);
        let mut pool = toy_pool(400);
        let val: Vec<usize> = (0..30).collect();
        let q0: Vec<usize> = (30..57).collect();
        oracle.query_validation(&val, &mut pool).unwrap();
        oracle.query_labels(&q0, &mut pool).unwrap();
        assert_eq!(oracle.budget_remaining(), 243);
        let rest: Vec<usize> = (57..300).collect();
        oracle.query_labels(&rest, &mut pool).unwrap();
        assert_eq!(oracle.budget_remaining(), 0);
        assert_eq!(oracle.query_log().len(), 300);
    }

    #[test]
    fn full_scale_cycle_charge() {
        let mut b = QueryBudget::new(30_000);
        b.try_spend(3000).unwrap();
        b.try_spend(2700).unwrap();
        assert_eq!(b.spent(), 5700);
    }

    #[test]
    fn over_budget_is_atomic() {
        let mut oracle = toy_oracle(10);
        let mut pool = toy_pool(20);
        oracle.query_labels(&[0, 1, 2], &mut pool).unwrap();
        let req: Vec<usize> = (3..11).collect();
        assert_eq!(req.len(), oracle.budget_remaining() + 1);
        let err = oracle.query_labels(&req, &mut pool).unwrap_err();
        assert!(matches!(err, Error::BudgetExhausted { requested: 8, remaining: 7 }));
        assert_eq!(oracle.budget().spent(), 3);
        assert_eq!(pool.count(SampleStatus::Queried), 3);
    }

    #[test]
    fn requery_is_rejected() {
        let mut oracle = toy_oracle(10);
        let mut pool = toy_pool(20);
        oracle.query_labels(&[4], &mut pool).unwrap();
        assert!(matches!(
            oracle.query_labels(&[4], &mut pool),
            Err(Error::RejectedInput(_))
        ));
        assert_eq!(oracle.budget().spent(), 1);
    }

    #[test]
    fn labels_match_the_model() {
        let model = MlpModel::new(MlpSpec::new(2, vec![4], 3).with_seed(1)).unwrap();
        let mut oracle = VictimOracle::in_process(model.clone(), 50);
        let mut pool = toy_pool(50);
        let got = oracle.query_labels(&[5, 6, 7], &mut pool).unwrap();
        for (i, y) in got {
            assert_eq!(y, model.predict_label(pool.dataset().row(i)).unwrap());
            assert_eq!(pool.queried_labels()[&i], y);
        }
    }
}

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Unlabeled,
    Queried,
    Pseudo,
    Validation,
}

/// The attacker's sample pool with mutually exclusive per-sample status.
///
/// `queried`, `pseudo` and `validation` label maps are keyed exactly by the
/// samples holding that status.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    dataset: Dataset,
    status: Vec<SampleStatus>,
    queried: BTreeMap<usize, usize>,
    pseudo: BTreeMap<usize, usize>,
    validation: BTreeMap<usize, usize>,
}

impl PoolState {
    pub fn new(dataset: Dataset) -> Self {
        let n = dataset.len();
        Self {
            dataset,
            status: vec![SampleStatus::Unlabeled; n],
            queried: BTreeMap::new(),
            pseudo: BTreeMap::new(),
            validation: BTreeMap::new(),
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn len(&self) -> usize {
        self.status.len()
    }

    pub fn is_empty(&self) -> bool {
        self.status.is_empty()
    }

    pub fn status(&self, i: usize) -> SampleStatus {
        self.status[i]
    }

    pub fn unlabeled(&self) -> Vec<usize> {
        self.indices_with(SampleStatus::Unlabeled)
    }

    pub fn indices_with(&self, s: SampleStatus) -> Vec<usize> {
        (0..self.status.len()).filter(|&i| self.status[i] == s).collect()
    }

    pub fn count(&self, s: SampleStatus) -> usize {
        self.status.iter().filter(|&&x| x == s).count()
    }

    pub fn queried_labels(&self) -> &BTreeMap<usize, usize> {
        &self.queried
    }

    pub fn pseudo_labels(&self) -> &BTreeMap<usize, usize> {
        &self.pseudo
    }

    pub fn validation_labels(&self) -> &BTreeMap<usize, usize> {
        &self.validation
    }

    /// Rows and labels of a label map, in index order.
    pub fn labeled_rows<'a>(&'a self, map: &BTreeMap<usize, usize>) -> (Vec<&'a [f64]>, Vec<usize>) {
        map.iter().map(|(&i, &y)| (self.dataset.row(i), y)).unzip()
    }

    /// Checks that every index exists and is unlabeled, with no repeats.
    pub fn check_unlabeled(&self, indices: &[usize]) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(indices.len());
        for &i in indices {
            if i >= self.status.len() {
                return Err(Error::input(format!("sample index {i} out of range")));
            }
            if self.status[i] != SampleStatus::Unlabeled {
                return Err(Error::input(format!(
                    "sample {i} is already {:?}",
                    self.status[i]
                )));
            }
            if !seen.insert(i) {
                return Err(Error::input(format!("sample {i} requested twice")));
            }
        }
        Ok(())
    }

    /// Moves unlabeled samples into `status` with the given labels. Atomic:
    /// either every entry is applied or none.
    pub fn assign(&mut self, labels: &BTreeMap<usize, usize>, status: SampleStatus) -> Result<()> {
        if status == SampleStatus::Unlabeled {
            return Err(Error::input("cannot assign a label with unlabeled status"));
        }
        let idx: Vec<usize> = labels.keys().copied().collect();
        self.check_unlabeled(&idx)?;
        let map = match status {
            SampleStatus::Queried => &mut self.queried,
            SampleStatus::Pseudo => &mut self.pseudo,
            SampleStatus::Validation => &mut self.validation,
            SampleStatus::Unlabeled => unreachable!(),
        };
        for (&i, &y) in labels {
            self.status[i] = status;
            map.insert(i, y);
        }
        Ok(())
    }

    /// Returns every pseudo-labeled sample to the unlabeled state.
    pub fn clear_pseudo(&mut self) {
        for &i in self.pseudo.keys() {
            self.status[i] = SampleStatus::Unlabeled;
        }
        self.pseudo.clear();
    }
}

/// Budget arithmetic shared by the split and the per-cycle query sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub total: usize,
    pub cycles: usize,
    pub validation_fraction: f64,
}

impl BudgetPlan {
    pub fn validate(&self) -> Result<()> {
        if self.total == 0 || self.cycles == 0 {
            return Err(Error::config("budget total and cycles must be positive"));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction must lie in [0, 0.5]"));
        }
        if self.per_cycle() == 0 {
            return Err(Error::config("budget too small for the number of cycles"));
        }
        Ok(())
    }

    pub fn validation_size(&self) -> usize {
        (self.validation_fraction * self.total as f64).round() as usize
    }

    /// Nominal query-set size; the final set also absorbs the remainder.
    pub fn per_cycle(&self) -> usize {
        (self.total - self.validation_size()) / self.cycles
    }

    /// Size of query set `k` (0-based, `k < cycles`).
    pub fn query_size(&self, k: usize) -> usize {
        let base = self.per_cycle();
        if k + 1 == self.cycles {
            base + (self.total - self.validation_size()) % self.cycles
        } else {
            base
        }
    }
}

/// Draws the validation set and then `Q_0`, uniformly without replacement
/// from the unlabeled samples. Both returned sorted.
pub fn initial_split(pool: &PoolState, plan: &BudgetPlan, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    plan.validate()?;
    let unlabeled = pool.unlabeled();
    if unlabeled.len() < plan.total {
        return Err(Error::config(format!(
            "pool has {} unlabeled samples, budget needs {}",
            unlabeled.len(),
            plan.total
        )));
    }
    let n_val = plan.validation_size();
    let n_q0 = plan.query_size(0);
    let mut draw = rng::rng(seed);
    let picked = index::sample(&mut draw, unlabeled.len(), n_val + n_q0).into_vec();
    let mut val: Vec<usize> = picked[..n_val].iter().map(|&k| unlabeled[k]).collect();
    let mut q0: Vec<usize> = picked[n_val..].iter().map(|&k| unlabeled[k]).collect();
    val.sort_unstable();
    q0.sort_unstable();
    Ok((val, q0))
}

//! Query selection: consensus entropy, label disagreement, k-center and
//! random baselines.

use std::io::Write;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::datapool::{Dataset, PoolState};
use crate::ensemble::{self, EnsembleState};
use crate::error::{Error, Result};
use crate::numkit::{argmax, dot};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    ConsensusEntropy,
    LabelDisagreement,
    Kcenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionStrategy {
    pub kind: StrategyKind,
    /// Keep the top `5 · batch` by score, then thin to `batch` with k-center.
    /// Only meaningful for the two ensemble-scored kinds.
    #[serde(default)]
    pub kcenter_hybrid: bool,
}

impl SelectionStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            kcenter_hybrid: false,
        }
    }

    pub fn hybrid(kind: StrategyKind) -> Self {
        Self {
            kind,
            kcenter_hybrid: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kcenter_hybrid && !self.is_scored() {
            return Err(Error::config(
                "kcenter_hybrid applies only to consensus_entropy or label_disagreement",
            ));
        }
        Ok(())
    }

    pub fn is_scored(&self) -> bool {
        matches!(
            self.kind,
            StrategyKind::ConsensusEntropy | StrategyKind::LabelDisagreement
        )
    }

    pub fn name(&self) -> String {
        let base = match self.kind {
            StrategyKind::Random => "random",
            StrategyKind::ConsensusEntropy => "consensus_entropy",
            StrategyKind::LabelDisagreement => "label_disagreement",
            StrategyKind::Kcenter => "kcenter",
        };
        if self.kcenter_hybrid {
            format!("{base}+kcenter")
        } else {
            base.to_string()
        }
    }
}

/// Natural-log Shannon entropy with `0 · ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::input("empty distribution"));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::input("distribution has a negative or non-finite entry"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("distribution sums to {s}")));
    }
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &v in p {
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    h.max(0.0)
}

fn check_candidates(pool: &PoolState, candidates: &[usize]) -> Result<()> {
    pool.check_unlabeled(candidates)
}

/// `H(mean_i p_i(x))` for each candidate.
pub fn consensus_entropy_scores(
    state: &EnsembleState,
    pool: &PoolState,
    candidates: &[usize],
) -> Result<Vec<f64>> {
    check_candidates(pool, candidates)?;
    candidates
        .iter()
        .map(|&i| {
            let probs = ensemble::member_probs(state, pool.dataset().row(i))?;
            Ok(entropy_unchecked(&ensemble::consensus_mean(&probs)?))
        })
        .collect()
}

/// Entropy of the member vote shares for each candidate.
pub fn disagreement_scores(
    state: &EnsembleState,
    pool: &PoolState,
    candidates: &[usize],
) -> Result<Vec<f64>> {
    check_candidates(pool, candidates)?;
    let n = state.num_classes();
    candidates
        .iter()
        .map(|&i| {
            let probs = ensemble::member_probs(state, pool.dataset().row(i))?;
            let labels: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
            Ok(entropy_unchecked(&ensemble::disagreement_vector(&labels, n)?))
        })
        .collect()
}

/// The `k` best-scoring candidates (lower pool index wins ties), ascending.
pub fn top_k_select(candidates: &[usize], scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if candidates.len() != scores.len() {
        return Err(Error::input("candidates and scores differ in length"));
    }
    if k > candidates.len() {
        return Err(Error::input(format!(
            "cannot select {k} of {} candidates",
            candidates.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::input("NaN score"));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(candidates[a].cmp(&candidates[b]))
    });
    let mut out: Vec<usize> = order[..k].iter().map(|&j| candidates[j]).collect();
    out.sort_unstable();
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    dot(&diff, &diff)
}

/// Greedy farthest-point selection in raw feature space: `k` times, take
/// the candidate whose nearest center is farthest away (lower index on ties)
/// and make it a center. Returned ascending.
pub fn kcenter_select(
    data: &Dataset,
    centers: &[usize],
    candidates: &[usize],
    k: usize,
) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::input("no candidates"));
    }
    if k > candidates.len() {
        return Err(Error::input(format!(
            "cannot select {k} of {} candidates",
            candidates.len()
        )));
    }
    if let Some(&bad) = centers.iter().chain(candidates).find(|&&i| i >= data.len()) {
        return Err(Error::input(format!("index {bad} out of range")));
    }
    let mut cand: Vec<usize> = candidates.to_vec();
    cand.sort_unstable();
    cand.dedup();
    if k > cand.len() {
        return Err(Error::input("duplicate candidates leave too few to select"));
    }
    let mut nearest: Vec<f64> = cand
        .iter()
        .map(|&i| {
            centers
                .iter()
                .map(|&c| sq_dist(data.row(i), data.row(c)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut taken = vec![false; cand.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut pick = None;
        for j in 0..cand.len() {
            if taken[j] {
                continue;
            }
            match pick {
                Some(p) if nearest[j] <= nearest[p] => {}
                _ => pick = Some(j),
            }
        }
        let p = pick.expect("k never exceeds the remaining candidates");
        taken[p] = true;
        out.push(cand[p]);
        let newc = data.row(cand[p]);
        for j in 0..cand.len() {
            if !taken[j] {
                nearest[j] = nearest[j].min(sq_dist(data.row(cand[j]), newc));
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Uniform sample of `k` candidates without replacement, ascending.
pub fn random_select(candidates: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > candidates.len() {
        return Err(Error::input(format!(
            "cannot select {k} of {} candidates",
            candidates.len()
        )));
    }
    let mut out: Vec<usize> = candidates
        .choose_multiple(&mut rng::rng(seed), k)
        .copied()
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Outcome of one selection round. `scores` is aligned with `candidates`
/// and present only for ensemble-scored strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub chosen: Vec<usize>,
    pub candidates: Vec<usize>,
    pub scores: Option<Vec<f64>>,
}

/// Picks the next `k` unlabeled samples according to `strategy`.
pub fn select(
    strategy: &SelectionStrategy,
    state: &EnsembleState,
    pool: &PoolState,
    k: usize,
    seed: u64,
) -> Result<Selection> {
    strategy.validate()?;
    let candidates = pool.unlabeled();
    let labeled: Vec<usize> = {
        let mut v: Vec<usize> = pool
            .queried_labels()
            .keys()
            .chain(pool.validation_labels().keys())
            .copied()
            .collect();
        v.sort_unstable();
        v
    };
    let (chosen, scores) = match strategy.kind {
        StrategyKind::Random => (random_select(&candidates, k, seed)?, None),
        StrategyKind::Kcenter => (kcenter_select(pool.dataset(), &labeled, &candidates, k)?, None),
        StrategyKind::ConsensusEntropy | StrategyKind::LabelDisagreement => {
            let scores = if strategy.kind == StrategyKind::ConsensusEntropy {
                consensus_entropy_scores(state, pool, &candidates)?
            } else {
                disagreement_scores(state, pool, &candidates)?
            };
            let chosen = if strategy.kcenter_hybrid {
                let wide = top_k_select(&candidates, &scores, (5 * k).min(candidates.len()))?;
                kcenter_select(pool.dataset(), &labeled, &wide, k)?
            } else {
                top_k_select(&candidates, &scores, k)?
            };
            (chosen, Some(scores))
        }
    };
    Ok(Selection {
        chosen,
        candidates,
        scores,
    })
}

/// Appends `cycle,sample_index,score,selected` rows for one round.
pub fn write_scores<W: Write>(mut w: W, cycle: usize, sel: &Selection) -> Result<()> {
    let Some(scores) = &sel.scores else {
        return Ok(());
    };
    for (&i, &s) in sel.candidates.iter().zip(scores) {
        let picked = sel.chosen.binary_search(&i).is_ok();
        writeln!(w, "{cycle},{i},{s},{}", u8::from(picked))?;
    }
    Ok(())
}

pub const SCORES_HEADER: &str = "cycle,sample_index,score,selected";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapool::Layout;

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.2; 5]).unwrap() - 5f64.ln()).abs() < 1e-12);
        let want = -(0.6f64 * 0.6f64.ln() + 2.0 * 0.2 * 0.2f64.ln());
        assert!((entropy(&[0.6, 0.2, 0.2]).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.9503).abs() < 1e-4);
        assert!(entropy(&[0.5, 0.6]).is_err());
        assert!(entropy(&[1.1, -0.1]).is_err());
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_select(&[0, 1, 2], &[0.1, 0.9, 0.5], 2).unwrap(), vec![1, 2]);
        assert_eq!(top_k_select(&[9, 4, 7, 5], &[1.0; 4], 3).unwrap(), vec![4, 5, 7]);
        assert!(top_k_select(&[1], &[0.0], 2).is_err());
    }

    #[test]
    fn kcenter_examples() {
        let d = Dataset::new(vec![0.0, 4.0, 10.0], 1, None, Layout::Tabular).unwrap();
        assert_eq!(kcenter_select(&d, &[0], &[1, 2], 1).unwrap(), vec![2]);
        assert_eq!(kcenter_select(&d, &[0], &[1, 2], 2).unwrap(), vec![1, 2]);
        let d = Dataset::new(vec![0.0, 0.0, 0.5], 1, None, Layout::Tabular).unwrap();
        assert_eq!(kcenter_select(&d, &[0], &[1, 2], 1).unwrap(), vec![2]);
        assert!(kcenter_select(&d, &[0], &[], 0).is_err());
    }

    #[test]
    fn random_examples() {
        let c: Vec<usize> = (10..20).collect();
        assert_eq!(random_select(&c, 10, 3).unwrap(), c);
        assert_eq!(random_select(&c, 4, 3).unwrap(), random_select(&c, 4, 3).unwrap());
        assert!(random_select(&c, 11, 3).is_err());
    }
}

use serde::{Deserialize, Serialize};

use crate::datapool::Dataset;
use crate::ensemble;
use crate::error::{Error, Result};
use crate::numkit::{argmax, MlpModel};
use crate::victim::HardLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    /// Fraction matching ground truth.
    pub accuracy: f64,
    /// Fraction matching the victim.
    pub agreement: f64,
}

impl Metric {
    fn from_counts(acc_hits: usize, agr_hits: usize, n: usize) -> Self {
        Metric {
            accuracy: acc_hits as f64 / n as f64,
            agreement: agr_hits as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub members: Vec<Metric>,
    /// Majority vote over the members.
    pub ensemble: Metric,
}

pub const LABELS_HEADER_PREFIX: &str = "sample_index,truth,victim";

/// Scores each model and their majority vote against ground truth and
/// precomputed victim labels. Also returns the per-sample label table
/// `[truth, victim, member_0, …, ensemble]`.
pub fn evaluate_labels(
    models: &[&MlpModel],
    victim_labels: &[usize],
    test: &Dataset,
) -> Result<(Evaluation, Vec<Vec<usize>>)> {
    let truth = test
        .labels()
        .ok_or_else(|| Error::input("test set must be labeled"))?;
    if test.is_empty() {
        return Err(Error::input("empty test set"));
    }
    if models.is_empty() {
        return Err(Error::input("no models to evaluate"));
    }
    if victim_labels.len() != test.len() {
        return Err(Error::input("victim labels do not cover the test set"));
    }
    let k = models.len();
    let mut acc = vec![0usize; k + 1];
    let mut agr = vec![0usize; k + 1];
    let mut table = Vec::with_capacity(test.len());
    for (i, x) in test.rows().enumerate() {
        let probs: Vec<Vec<f64>> = models
            .iter()
            .enumerate()
            .map(|(m, model)| model.softmax_probs(x).map_err(|e| e.in_member(m)))
            .collect::<Result<_>>()?;
        let labels: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let vote = ensemble::majority_vote(&labels, &ensemble::consensus_mean(&probs)?)?;
        let mut row = Vec::with_capacity(k + 3);
        row.push(truth[i]);
        row.push(victim_labels[i]);
        for (j, &l) in labels.iter().chain(std::iter::once(&vote)).enumerate() {
            acc[j] += usize::from(l == truth[i]);
            agr[j] += usize::from(l == victim_labels[i]);
            row.push(l);
        }
        table.push(row);
    }
    let n = test.len();
    let mut metrics: Vec<Metric> = (0..=k).map(|j| Metric::from_counts(acc[j], agr[j], n)).collect();
    let ensemble = metrics.pop().expect("k + 1 entries");
    Ok((
        Evaluation {
            members: metrics,
            ensemble,
        },
        table,
    ))
}

/// Accuracy and agreement per model and for their majority vote. Victim
/// labels are obtained directly and are not charged to any budget.
pub fn evaluate(models: &[&MlpModel], victim: &dyn HardLabel, test: &Dataset) -> Result<Evaluation> {
    let victim_labels: Vec<usize> = test.rows().map(|x| victim.hard_label(x)).collect::<Result<_>>()?;
    Ok(evaluate_labels(models, &victim_labels, test)?.0)
}

/// Writes the label table from [`evaluate_labels`] as CSV.
pub fn write_label_table<W: std::io::Write>(mut w: W, members: usize, table: &[Vec<usize>]) -> Result<()> {
    let mut header = LABELS_HEADER_PREFIX.to_string();
    for m in 0..members {
        header.push_str(&format!(",member{m}"));
    }
    header.push_str(",ensemble");
    writeln!(w, "{header}")?;
    for (i, row) in table.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        writeln!(w, "{i},{}", cells.join(","))?;
    }
    Ok(())
}

//! L∞ projected gradient attacks on thief members and how often the
//! resulting examples also fool the victim.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datapool::{Dataset, Layout};
use crate::error::{Error, Result};
use crate::numkit::MlpModel;
use crate::rng;
use crate::victim::HardLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgdConfig {
    pub epsilon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Defaults to `2.5 · epsilon / steps`, capped at `epsilon`.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub clamp: Option<(f64, f64)>,
    #[serde(default = "default_true")]
    pub random_start: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub denominator: Denominator,
}

fn default_steps() -> usize {
    20
}

fn default_true() -> bool {
    true
}

/// Which samples the shared-failure count is divided by.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Samples whose adversarial fools the source model.
    #[default]
    SourceFooled,
    AllSamples,
}

impl PgdConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            steps: default_steps(),
            step_size: None,
            clamp: None,
            random_start: true,
            seed: 0,
            denominator: Denominator::SourceFooled,
        }
    }

    /// `8/255` ball inside the unit box.
    pub fn image_default() -> Self {
        Self {
            clamp: Some((0.0, 1.0)),
            ..Self::new(8.0 / 255.0)
        }
    }

    /// Default box for a layout: the unit box for images, none otherwise.
    pub fn for_layout(epsilon: f64, layout: Layout) -> Self {
        let clamp = match layout {
            Layout::Image { .. } => Some((0.0, 1.0)),
            Layout::Tabular => None,
        };
        Self {
            clamp,
            ..Self::new(epsilon)
        }
    }

    pub fn alpha(&self) -> f64 {
        self.step_size
            .unwrap_or((2.5 * self.epsilon / self.steps.max(1) as f64).min(self.epsilon))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon must be a nonnegative finite number"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps must be positive"));
        }
        let a = self.alpha();
        if !(a >= 0.0 && a <= self.epsilon) {
            return Err(Error::config("step_size must lie in [0, epsilon]"));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo < hi) {
                return Err(Error::config("clamp requires lo < hi"));
            }
        }
        Ok(())
    }
}

fn project(v: f64, x0: f64, eps: f64, clamp: Option<(f64, f64)>) -> f64 {
    let v = v.clamp(x0 - eps, x0 + eps);
    match clamp {
        Some((lo, hi)) => v.clamp(lo, hi),
        None => v,
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Signed-gradient ascent on the source's cross-entropy at `true_label`,
/// projected after every step onto the ε-ball around `x` intersected with
/// the clamp box.
pub fn pgd_attack(
    source: &MlpModel,
    x: &[f64],
    true_label: usize,
    cfg: &PgdConfig,
    draw: &mut rng::Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if let Some((lo, hi)) = cfg.clamp {
        if x.iter().any(|&v| v < lo || v > hi) {
            return Err(Error::input("input lies outside the clamp box"));
        }
    }
    let eps = cfg.epsilon;
    if eps == 0.0 {
        source.logits(x)?;
        return Ok(x.to_vec());
    }
    let mut adv: Vec<f64> = if cfg.random_start {
        x.iter()
            .map(|&v| project(v + draw.random_range(-eps..=eps), v, eps, cfg.clamp))
            .collect()
    } else {
        x.to_vec()
    };
    let alpha = cfg.alpha();
    for _ in 0..cfg.steps {
        let (_, g) = source.input_gradient(&adv, true_label)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::AttackFailed("non-finite input gradient".into()));
        }
        for ((a, &x0), gj) in adv.iter_mut().zip(x).zip(g) {
            *a = project(*a + alpha * sign(gj), x0, eps, cfg.clamp);
        }
    }
    Ok(adv)
}

/// `x + ε·s` with independent uniform signs `s_j ∈ {−1, +1}`, then clamped.
pub fn random_sign_perturbation(x: &[f64], eps: f64, clamp: Option<(f64, f64)>, draw: &mut rng::Rng) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let s = if draw.random_bool(0.5) { 1.0 } else { -1.0 };
            project(v + eps * s, v, eps, clamp)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRow {
    pub sample_index: usize,
    pub clean_src: usize,
    pub clean_victim: usize,
    pub adv_src: usize,
    pub adv_victim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub rows: Vec<TransferRow>,
    pub source_fooled: usize,
    pub shared_failures: usize,
    pub denominator: Denominator,
    /// `None` when the denominator is empty.
    pub transferability: Option<f64>,
    pub clean_acc_src: f64,
    pub clean_acc_victim: f64,
    pub adv_acc_src: f64,
    pub adv_acc_victim: f64,
}

/// Builds the report from per-sample labels and ground truth.
pub fn summarize(rows: Vec<TransferRow>, truth: &[usize], denominator: Denominator) -> TransferReport {
    let n = rows.len().max(1) as f64;
    let frac = |f: &dyn Fn(&TransferRow, usize) -> bool| {
        rows.iter().zip(truth).filter(|(r, &y)| f(r, y)).count() as f64 / n
    };
    let clean_acc_src = frac(&|r, y| r.clean_src == y);
    let clean_acc_victim = frac(&|r, y| r.clean_victim == y);
    let adv_acc_src = frac(&|r, y| r.adv_src == y);
    let adv_acc_victim = frac(&|r, y| r.adv_victim == y);
    let source_fooled = rows.iter().zip(truth).filter(|(r, &y)| r.adv_src != y).count();
    let shared_failures = rows
        .iter()
        .zip(truth)
        .filter(|(r, &y)| r.adv_src != y && r.adv_victim != y)
        .count();
    let denom = match denominator {
        Denominator::SourceFooled => source_fooled,
        Denominator::AllSamples => rows.len(),
    };
    let transferability = (denom > 0).then(|| shared_failures as f64 / denom as f64);
    TransferReport {
        rows,
        source_fooled,
        shared_failures,
        denominator,
        transferability,
        clean_acc_src,
        clean_acc_victim,
        adv_acc_src,
        adv_acc_victim,
    }
}

fn transfer_with<F>(
    source: &MlpModel,
    victim: &dyn HardLabel,
    data: &Dataset,
    denominator: Denominator,
    mut perturb: F,
) -> Result<TransferReport>
where
    F: FnMut(usize, &[f64], usize) -> Result<Vec<f64>>,
{
    let truth = data
        .labels()
        .ok_or_else(|| Error::input("transferability needs a labeled dataset"))?;
    if data.is_empty() {
        return Err(Error::input("empty dataset"));
    }
    let mut rows = Vec::with_capacity(data.len());
    for (i, (x, &y)) in data.rows().zip(truth).enumerate() {
        let adv = perturb(i, x, y)?;
        rows.push(TransferRow {
            sample_index: i,
            clean_src: source.predict_label(x)?,
            clean_victim: victim.hard_label(x)?,
            adv_src: source.predict_label(&adv)?,
            adv_victim: victim.hard_label(&adv)?,
        });
    }
    Ok(summarize(rows, truth, denominator))
}

/// Crafts a PGD example on `source` for every sample and measures how many
/// of the source's failures the victim shares. Sample `i` draws its random
/// start from `derive(cfg.seed, i)`.
pub fn transferability(
    source: &MlpModel,
    victim: &dyn HardLabel,
    data: &Dataset,
    cfg: &PgdConfig,
) -> Result<TransferReport> {
    cfg.validate()?;
    transfer_with(source, victim, data, cfg.denominator, |i, x, y| {
        pgd_attack(source, x, y, cfg, &mut rng::rng(rng::derive(cfg.seed, i as u64)))
    })
}

/// Same measurement with random `±ε` sign perturbations instead of PGD.
pub fn random_transferability(
    source: &MlpModel,
    victim: &dyn HardLabel,
    data: &Dataset,
    cfg: &PgdConfig,
) -> Result<TransferReport> {
    cfg.validate()?;
    transfer_with(source, victim, data, cfg.denominator, |i, x, _| {
        Ok(random_sign_perturbation(
            x,
            cfg.epsilon,
            cfg.clamp,
            &mut rng::rng(rng::derive(cfg.seed, i as u64)),
        ))
    })
}

pub const TRANSFER_HEADER: &str = "sample_index,clean_src,clean_victim,adv_src,adv_victim";

pub fn write_transfer_csv<W: Write>(mut w: W, report: &TransferReport) -> Result<()> {
    writeln!(w, "{TRANSFER_HEADER}")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.sample_index, r.clean_src, r.clean_victim, r.adv_src, r.adv_victim
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::MlpSpec;

    fn linear() -> MlpModel {
        // logits = W x with W = [[1, -2, 0.5], [-1, 2, -0.5]]
        MlpModel::from_parameters(
            MlpSpec::new(3, vec![], 2),
            vec![1.0, -2.0, 0.5, -1.0, 2.0, -0.5, 0.0, 0.0],
            0,
        )
        .unwrap()
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let x = [0.3, -0.2, 0.9];
        let out = pgd_attack(&linear(), &x, 0, &PgdConfig::new(0.0), &mut rng::rng(1)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn linear_single_step_closed_form() {
        // d CE / dx for label 0 is (p0 - 1)(w0 - w1), so the sign is -sign(w0 - w1).
        let cfg = PgdConfig {
            steps: 1,
            step_size: Some(0.05),
            random_start: false,
            ..PgdConfig::new(0.1)
        };
        let x = [0.1, 0.2, 0.3];
        let out = pgd_attack(&linear(), &x, 0, &cfg, &mut rng::rng(0)).unwrap();
        let w_diff = [2.0, -4.0, 1.0];
        for j in 0..3 {
            assert_eq!(out[j], x[j] - 0.05 * sign(w_diff[j]));
        }
    }

    #[test]
    fn stays_in_box() {
        let cfg = PgdConfig {
            clamp: Some((0.0, 1.0)),
            ..PgdConfig::new(0.3)
        };
        let m = linear();
        let mut draw = rng::rng(5);
        for t in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| draw.random_range(0.0..=1.0)).collect();
            let adv = pgd_attack(&m, &x, t % 2, &cfg, &mut draw).unwrap();
            for (a, b) in adv.iter().zip(&x) {
                assert!((0.0..=1.0).contains(a));
                assert!((a - b).abs() <= 0.3 + 1e-9);
            }
        }
    }

    #[test]
    fn transfer_arithmetic() {
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for i in 0..100 {
            let fooled = i < 80;
            let victim_fooled = i < 60;
            rows.push(TransferRow {
                sample_index: i,
                clean_src: 0,
                clean_victim: 0,
                adv_src: usize::from(fooled),
                adv_victim: usize::from(victim_fooled),
            });
            truth.push(0);
        }
        let r = summarize(rows.clone(), &truth, Denominator::SourceFooled);
        assert_eq!(r.transferability, Some(0.75));
        let r = summarize(rows, &truth, Denominator::AllSamples);
        assert_eq!(r.transferability, Some(0.6));
        let none = summarize(
            vec![TransferRow {
                sample_index: 0,
                clean_src: 1,
                clean_victim: 1,
                adv_src: 1,
                adv_victim: 0,
            }],
            &[1],
            Denominator::SourceFooled,
        );
        assert_eq!(none.transferability, None);
    }
}

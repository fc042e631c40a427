#![allow(dead_code)]

use stealkit::adversarial::PgdConfig;
use stealkit::datapool::SyntheticKind;
use stealkit::harness::{AdversarialConfig, DataConfig, EnsembleConfig, ExperimentConfig, VictimConfig};
use stealkit::numkit::{MlpModel, MlpSpec, SgdConfig};
use stealkit::selection::{SelectionStrategy, StrategyKind};
use stealkit::ssl::SslConfig;

/// Class separation of the reference Gaussian mixture. Chosen so the victim
/// lands just above 0.95 test accuracy (see `reference_victim_accuracy`).
pub const REFERENCE_SEPARATION: f64 = 4.5;

/// The desk-scale reference experiment: four classes in eight dimensions, a
/// 20 000-sample pool, 600 queries over 10 cycles, the five-member ladder,
/// pseudo-labeling and a transfer study at ε = 0.25.
pub fn reference_config(kind: StrategyKind, root_seed: u64) -> ExperimentConfig {
    let victim_sgd = SgdConfig {
        epochs: 60,
        lr_decay_every: 20,
        ..SgdConfig::victim_default()
    };
    ExperimentConfig {
        data: DataConfig::Synthetic {
            generator: SyntheticKind::GaussianMixture {
                classes: 4,
                dim: 8,
                separation: REFERENCE_SEPARATION,
            },
            victim_train: 2000,
            pool: 20_000,
            test: 2000,
            seed: 7,
        },
        victim: VictimConfig {
            spec: MlpSpec::new(8, vec![64, 64], 4).with_seed(1234),
            sgd: victim_sgd,
            seed: 99,
            checkpoint: None,
            endpoint: None,
        },
        ensemble: EnsembleConfig::Desk {
            epochs: 30,
            lr_decay_every: 10,
        },
        strategy: SelectionStrategy::new(kind),
        budget: 600,
        cycles: 10,
        validation_fraction: 0.1,
        ssl: Some(SslConfig {
            per_class_cap: 50,
            epochs: 10,
            ..SslConfig::default()
        }),
        adversarial: Some(AdversarialConfig {
            pgd: PgdConfig::new(0.25),
            samples: 2000,
            victim_correct_only: true,
        }),
        root_seed,
        output_dir: None,
        dump_scores: false,
    }
}

/// A run small enough for unit-style checks: three classes in four
/// dimensions, 400 pool samples, 60 queries over 3 cycles.
pub fn small_config(kind: StrategyKind, root_seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        data: DataConfig::Synthetic {
            generator: SyntheticKind::GaussianMixture {
                classes: 3,
                dim: 4,
                separation: 3.0,
            },
            victim_train: 300,
            pool: 400,
            test: 150,
            seed: 11,
        },
        victim: VictimConfig {
            spec: MlpSpec::new(4, vec![16], 3).with_seed(5),
            sgd: SgdConfig {
                epochs: 15,
                lr_decay_every: 10,
                batch_size: 32,
                ..SgdConfig::victim_default()
            },
            seed: 3,
            checkpoint: None,
            endpoint: None,
        },
        ensemble: EnsembleConfig::Desk {
            epochs: 4,
            lr_decay_every: 2,
        },
        strategy: SelectionStrategy::new(kind),
        budget: 60,
        cycles: 3,
        validation_fraction: 0.1,
        ssl: Some(SslConfig {
            confidence_threshold: 0.4,
            per_class_cap: 20,
            epochs: 2,
            ..SslConfig::default()
        }),
        adversarial: Some(AdversarialConfig {
            pgd: PgdConfig {
                steps: 5,
                ..PgdConfig::new(0.5)
            },
            samples: 40,
            victim_correct_only: false,
        }),
        root_seed,
        output_dir: None,
        dump_scores: true,
    }
}

/// Independent reference implementations used as test oracles.
pub mod oracle {
    use std::collections::BTreeMap;

    /// `-Σ p ln p` summed term by term, skipping zeros.
    pub fn entropy(p: &[f64]) -> f64 {
        let mut h = 0.0;
        for &v in p {
            if v > 0.0 {
                h += -v * v.ln();
            }
        }
        h
    }

    /// Forward pass over flat parameters laid out layer by layer as a
    /// row-major weight matrix followed by the bias.
    pub fn logits(dims: &[usize], tanh: bool, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let mut off = 0;
        for l in 0..dims.len() - 1 {
            let (fi, fo) = (dims[l], dims[l + 1]);
            let w = &params[off..off + fi * fo];
            let b = &params[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let mut z = vec![0.0; fo];
            for o in 0..fo {
                let mut s = b[o];
                for i in 0..fi {
                    s += w[o * fi + i] * a[i];
                }
                z[o] = if l + 2 == dims.len() {
                    s
                } else if tanh {
                    s.tanh()
                } else {
                    s.max(0.0)
                };
            }
            a = z;
        }
        a
    }

    /// Mean cross-entropy computed with a plain log of the softmax.
    pub fn mean_loss(dims: &[usize], tanh: bool, params: &[f64], rows: &[Vec<f64>], labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for (x, &y) in rows.iter().zip(labels) {
            let z = logits(dims, tanh, params, x);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
            total += m + s.ln() - z[y];
        }
        total / rows.len() as f64
    }

    /// Central differences with step `h` on every parameter.
    pub fn fd_gradient(dims: &[usize], tanh: bool, params: &[f64], rows: &[Vec<f64>], labels: &[usize], h: f64) -> Vec<f64> {
        let mut p = params.to_vec();
        (0..p.len())
            .map(|j| {
                let orig = p[j];
                p[j] = orig + h;
                let up = mean_loss(dims, tanh, &p, rows, labels);
                p[j] = orig - h;
                let down = mean_loss(dims, tanh, &p, rows, labels);
                p[j] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// `|a − b| / max(|a|, |b|, floor)`.
    pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(floor)
    }

    /// Candidates whose rank (number of candidates with a higher score, or
    /// an equal score and a lower index) is below `k`, ascending.
    pub fn top_k(candidates: &[usize], scores: &[f64], k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..candidates.len())
            .filter(|&a| {
                let rank = (0..candidates.len())
                    .filter(|&b| {
                        scores[b] > scores[a] || (scores[b] == scores[a] && candidates[b] < candidates[a])
                    })
                    .count();
                rank < k
            })
            .map(|a| candidates[a])
            .collect();
        out.sort_unstable();
        out
    }

    fn sq(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    /// Farthest-point greedy recomputing every distance from scratch.
    pub fn kcenter(rows: &[Vec<f64>], centers: &[usize], candidates: &[usize], k: usize) -> Vec<usize> {
        let mut chosen_centers: Vec<usize> = centers.to_vec();
        let mut remaining: Vec<usize> = candidates.to_vec();
        remaining.sort_unstable();
        remaining.dedup();
        let mut out = Vec::new();
        for _ in 0..k {
            let gap = |i: usize| {
                chosen_centers
                    .iter()
                    .map(|&c| sq(&rows[i], &rows[c]))
                    .fold(f64::INFINITY, f64::min)
            };
            let mut best = remaining[0];
            for &i in &remaining[1..] {
                if gap(i) > gap(best) {
                    best = i;
                }
            }
            remaining.retain(|&i| i != best);
            chosen_centers.push(best);
            out.push(best);
        }
        out.sort_unstable();
        out
    }

    fn first_max(p: &[f64]) -> usize {
        let mut best = 0;
        for i in 1..p.len() {
            if p[i] > p[best] {
                best = i;
            }
        }
        best
    }

    /// One sample's pseudo-label decision from member distributions on the
    /// original input and on its weak view: `Some(label)` when all members
    /// agree, at most `max_changes` flip under the weak view, and every
    /// member's top probability reaches `threshold`.
    pub fn pseudo_label(original: &[Vec<f64>], weak: &[Vec<f64>], threshold: f64, max_changes: usize) -> Option<usize> {
        let labels: Vec<usize> = original.iter().map(|p| first_max(p)).collect();
        let first = labels[0];
        if labels.iter().any(|&l| l != first) {
            return None;
        }
        let mut flips = 0;
        for (w, &l) in weak.iter().zip(&labels) {
            if first_max(w) != l {
                flips += 1;
            }
        }
        if flips > max_changes {
            return None;
        }
        for (p, &l) in original.iter().zip(&labels) {
            if p[l] < threshold {
                return None;
            }
        }
        Some(first)
    }

    /// Keep the `cap` most confident per class; lower index breaks ties.
    pub fn class_cap(selected: &BTreeMap<usize, usize>, conf: &BTreeMap<usize, f64>, cap: usize) -> BTreeMap<usize, usize> {
        selected
            .iter()
            .filter(|(&i, &y)| {
                let better = selected
                    .iter()
                    .filter(|(&j, &z)| z == y && (conf[&j] > conf[&i] || (conf[&j] == conf[&i] && j < i)))
                    .count();
                better < cap
            })
            .map(|(&i, &y)| (i, y))
            .collect()
    }
}

/// A random pseudo-labeling instance: five small members of distinct
/// widths, briefly trained and rescaled so confidences straddle the threshold,
/// a 200-sample pool with 20 queried samples, and varied guard settings.
pub fn filter_instance(seed: u64) -> (stealkit::ensemble::EnsembleState, stealkit::datapool::PoolState, SslConfig) {
    use std::collections::BTreeMap;
    use stealkit::datapool::{make_synthetic, PoolState, SampleStatus};
    use stealkit::ensemble::{EnsembleSpec, EnsembleState, MemberSpec};

    let data = make_synthetic(
        SyntheticKind::GaussianMixture {
            classes: 3,
            dim: 3,
            separation: 2.0,
        },
        200,
        seed,
    )
    .unwrap();
    let labels = data.labels().unwrap().to_vec();
    let mut pool = PoolState::new(data.without_labels());
    let q: BTreeMap<usize, usize> = (0..20).map(|i| (i, labels[i])).collect();
    pool.assign(&q, SampleStatus::Queried).unwrap();

    let members: Vec<MemberSpec> = (0..5)
        .map(|m| MemberSpec {
            model: MlpSpec::new(3, vec![m + 2], 3).with_seed(seed.wrapping_mul(31).wrapping_add(m as u64)),
            sgd: SgdConfig::member_default(0.01),
        })
        .collect();
    let spec = EnsembleSpec {
        members,
        shared_victim_arch_index: 0,
    };
    let rows: Vec<&[f64]> = data_rows(&pool);
    let epochs = 2 + (seed % 5) as usize;
    let scale = 0.8 + (seed % 4) as f64 * 0.4;
    let models: Vec<MlpModel> = spec
        .members
        .iter()
        .enumerate()
        .map(|(m, member)| {
            let sgd = SgdConfig {
                epochs,
                batch_size: 16,
                ..SgdConfig::member_default(0.05)
            };
            let init = MlpModel::new(member.model.clone()).unwrap();
            let mut model = stealkit::numkit::train_supervised(init, &rows, &labels, &sgd, seed ^ m as u64)
                .unwrap()
                .model;
            for p in model.parameters_mut() {
                *p *= scale;
            }
            model
        })
        .collect();
    let state = EnsembleState::from_models(spec, models).unwrap();
    let cfg = SslConfig {
        confidence_threshold: [0.9, 0.7, 0.5][(seed % 3) as usize],
        max_label_changes: [1, 0, 2, 1][(seed % 4) as usize],
        augment: stealkit::datapool::AugmentConfig {
            weak: stealkit::datapool::WeakAugment::Jitter {
                sigma: [0.1, 0.25][(seed % 2) as usize],
            },
            ..stealkit::datapool::AugmentConfig::tabular_default()
        },
        ..SslConfig::default()
    };
    (state, pool, cfg)
}

fn data_rows(pool: &stealkit::datapool::PoolState) -> Vec<&[f64]> {
    pool.dataset().rows().collect()
}

/// Jittered copy of `x` drawn exactly as the weak view of pool sample
/// `index` under filter seed `seed`.
pub fn jitter_view(x: &[f64], sigma: f64, seed: u64, index: usize) -> Vec<f64> {
    use rand::Rng;
    let mut draw = stealkit::rng::rng(stealkit::rng::derive(seed, index as u64));
    x.iter()
        .map(|v| {
            let z: f64 = draw.sample(rand_distr::StandardNormal);
            v + sigma * z
        })
        .collect()
}

/// A labeled test set plus a source and a victim trained on separate draws
/// of the same three-class mixture.
pub fn trained_pair() -> (stealkit::datapool::Dataset, MlpModel, MlpModel) {
    let kind = SyntheticKind::GaussianMixture {
        classes: 3,
        dim: 4,
        separation: 3.0,
    };
    let all = stealkit::datapool::make_synthetic(kind, 1200, 21).unwrap();
    let train = |range: std::ops::Range<usize>, hidden: Vec<usize>, seed: u64| {
        let idx: Vec<usize> = range.collect();
        let part = all.subset(&idx).unwrap();
        let rows: Vec<&[f64]> = part.rows().collect();
        let sgd = SgdConfig {
            epochs: 20,
            batch_size: 32,
            ..SgdConfig::member_default(0.05)
        };
        let init = MlpModel::new(MlpSpec::new(4, hidden, 3).with_seed(seed)).unwrap();
        stealkit::numkit::train_supervised(init, &rows, part.labels().unwrap(), &sgd, seed)
            .unwrap()
            .model
    };
    let source = train(0..400, vec![16], 1);
    let victim = train(400..800, vec![32, 16], 2);
    let test = all.subset(&(800..1200).collect::<Vec<_>>()).unwrap();
    (test, source, victim)
}

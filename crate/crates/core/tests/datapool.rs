use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use stealkit::datapool::augment::{apply_rand_lite_op, hflip, RandLiteOp};
use stealkit::datapool::*;
use stealkit::error::Error;
use stealkit::numkit::{accuracy, train_supervised, MlpModel, MlpSpec, SgdConfig};
use stealkit::rng;

fn flat(n: usize) -> Dataset {
    Dataset::new((0..n).map(|i| i as f64).collect(), 1, None, Layout::Tabular).unwrap()
}

#[test]
fn wide_mixture_is_linearly_separable() {
    let kind = SyntheticKind::GaussianMixture { classes: 2, dim: 2, separation: 10.0 };
    let data = make_synthetic(kind, 1000, 3).unwrap();
    let labels = data.labels().unwrap();
    let rows: Vec<&[f64]> = data.rows().collect();
    let model = MlpModel::new(MlpSpec::new(2, vec![], 2).with_seed(1)).unwrap();
    let cfg = SgdConfig { epochs: 20, ..SgdConfig::member_default(0.05) };
    let fit = train_supervised(model, &rows[..800], &labels[..800], &cfg, 0).unwrap();
    assert!(accuracy(&fit.model, &rows[800..], &labels[800..]).unwrap() >= 0.99);
}

#[test]
fn mixture_examples() {
    let kind = SyntheticKind::GaussianMixture { classes: 5, dim: 3, separation: 4.0 };
    let five = make_synthetic(kind, 5, 1).unwrap();
    let got: BTreeSet<usize> = five.labels().unwrap().iter().copied().collect();
    assert_eq!(got, (0..5).collect());
    assert_eq!(make_synthetic(kind, 300, 8).unwrap(), make_synthetic(kind, 300, 8).unwrap());
    assert_ne!(make_synthetic(kind, 300, 8).unwrap(), make_synthetic(kind, 300, 9).unwrap());
    assert!(make_synthetic(SyntheticKind::GaussianMixture { classes: 1, dim: 3, separation: 1.0 }, 5, 0).is_err());
}

#[test]
fn class_means_are_separated() {
    let (k, d, sep) = (4, 8, 6.0);
    let data = make_synthetic(SyntheticKind::GaussianMixture { classes: k, dim: d, separation: sep }, 8000, 2).unwrap();
    let mut means = vec![vec![0.0; d]; k];
    let mut counts = vec![0.0; k];
    for (x, &y) in data.rows().zip(data.labels().unwrap()) {
        counts[y] += 1.0;
        for j in 0..d {
            means[y][j] += x[j];
        }
    }
    for (m, c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c);
    }
    for a in 0..k {
        for b in a + 1..k {
            let dist: f64 = means[a].iter().zip(&means[b]).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            assert!((dist - sep).abs() < 0.3, "classes {a},{b} at {dist}");
        }
    }
}

#[test]
fn tiny_digits_are_images_with_ten_classes() {
    let data = make_synthetic(SyntheticKind::TinyDigits { height: 7, width: 5 }, 50, 1).unwrap();
    assert_eq!(data.layout(), Layout::Image { h: 7, w: 5, c: 1 });
    assert_eq!(data.num_classes(), Some(10));
    assert!(data.features().iter().all(|v| v.is_finite()));
}

#[test]
fn dataset_validation() {
    assert!(matches!(Dataset::new(vec![], 1, None, Layout::Tabular), Err(Error::RejectedInput(_))));
    assert!(Dataset::new(vec![1.0, 2.0, 3.0], 2, None, Layout::Tabular).is_err());
    assert!(Dataset::new(vec![f64::NAN], 1, None, Layout::Tabular).is_err());
    assert!(Dataset::new(vec![1.0, 2.0], 1, Some(vec![0]), Layout::Tabular).is_err());
    assert!(Dataset::new(vec![0.0; 6], 6, None, Layout::Image { h: 2, w: 2, c: 2 }).is_err());
    assert!(flat(3).subset(&[]).is_err());
}

proptest! {
    #[test]
    fn datasets_round_trip_through_f32(
        n in 1usize..20,
        d in 1usize..6,
        seed in any::<u64>(),
        labeled in any::<bool>(),
    ) {
        use rand::Rng;
        let mut draw = rng::rng(seed);
        let features: Vec<f64> = (0..n * d).map(|_| f64::from(draw.random_range(-100.0f32..100.0))).collect();
        let labels = labeled.then(|| (0..n).map(|i| i % 3).collect());
        let data = Dataset::new(features, d, labels, Layout::Tabular).unwrap();
        let mut buf = Vec::new();
        data.write(&mut buf).unwrap();
        prop_assert_eq!(&buf[..4], b"AOTD");
        prop_assert_eq!(buf.len(), 4 + 12 + 1 + 1 + 4 * n * d + if labeled { 4 * n } else { 0 });
        prop_assert_eq!(Dataset::read(buf.as_slice()).unwrap(), data);
    }
}

#[test]
fn image_layout_survives_disk() {
    let data = make_synthetic(SyntheticKind::TinyDigits { height: 5, width: 3 }, 12, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.aotd");
    data.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), data);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.push(1);
    assert!(matches!(Dataset::read(bytes.as_slice()), Err(Error::Format(_))));
    bytes[0] = b'Z';
    assert!(matches!(Dataset::read(bytes.as_slice()), Err(Error::Format(_))));
}

#[test]
fn hflip_examples() {
    let layout = Layout::Image { h: 3, w: 3, c: 1 };
    let x: Vec<f64> = (0..9).map(f64::from).collect();
    let flipped = hflip(&x, layout).unwrap();
    assert_eq!(flipped, vec![2.0, 1.0, 0.0, 5.0, 4.0, 3.0, 8.0, 7.0, 6.0]);
    assert_eq!(hflip(&flipped, layout).unwrap(), x);

    let rgb = Layout::Image { h: 1, w: 2, c: 3 };
    assert_eq!(hflip(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], rgb).unwrap(), vec![4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);

    let mut draw = rng::rng(0);
    for _ in 0..20 {
        assert_eq!(weak_augment(&x, layout, &WeakAugment::Hflip { p: 0.0 }, &mut draw).unwrap(), x);
        assert_eq!(weak_augment(&x, layout, &WeakAugment::Hflip { p: 1.0 }, &mut draw).unwrap(), flipped);
    }
    assert!(matches!(
        weak_augment(&x, Layout::Tabular, &WeakAugment::Hflip { p: 0.5 }, &mut draw),
        Err(Error::RejectedInput(_))
    ));
}

#[test]
fn strong_augment_examples() {
    let x = [1.0, -2.0, 3.0, 0.5, 7.0, -1.5, 2.5, 4.0];
    let mut draw = rng::rng(3);
    for _ in 0..50 {
        let out = strong_augment(&x, Layout::Tabular, &StrongAugment::JitterDrop { sigma: 0.2, drop_frac: 0.25 }, 0.0, &mut draw).unwrap();
        assert_eq!(out.iter().filter(|&&v| v == 0.0).count(), 2);
    }

    let layout = Layout::Image { h: 3, w: 3, c: 1 };
    let img: Vec<f64> = (0..9).map(f64::from).collect();
    let still = strong_augment(&img, layout, &StrongAugment::RandLite { n_ops: 3, magnitude: 0.0 }, 4.0, &mut draw).unwrap();
    for (a, b) in still.iter().zip(&img) {
        assert!((a - b).abs() < 1e-12);
    }
    let cut = apply_rand_lite_op(&img, layout, RandLiteOp::Cutout, 1.0, 4.0, &mut draw).unwrap();
    assert_eq!(cut, vec![4.0; 9]);
}

proptest! {
    #[test]
    fn augmentation_is_pure_and_replayable(seed in any::<u64>(), sigma in 0.0f64..1.0) {
        let x = vec![0.25, -1.0, 3.5, 0.0];
        let draw = rng::rng(seed);
        let weak = WeakAugment::Jitter { sigma };
        let strong = StrongAugment::JitterDrop { sigma: sigma + 0.1, drop_frac: 0.5 };
        let a = weak_augment(&x, Layout::Tabular, &weak, &mut draw.clone()).unwrap();
        let b = weak_augment(&x, Layout::Tabular, &weak, &mut draw.clone()).unwrap();
        prop_assert_eq!(a, b);
        let a = strong_augment(&x, Layout::Tabular, &strong, 0.0, &mut draw.clone()).unwrap();
        let b = strong_augment(&x, Layout::Tabular, &strong, 0.0, &mut draw.clone()).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(x, vec![0.25, -1.0, 3.5, 0.0]);
    }
}

#[test]
fn augment_config_validation() {
    AugmentConfig::tabular_default().validate().unwrap();
    AugmentConfig::image_default().validate().unwrap();
    let mut cfg = AugmentConfig::tabular_default();
    cfg.weak = WeakAugment::Jitter { sigma: 0.3 };
    assert!(matches!(cfg.validate(), Err(Error::RejectedConfig(_))));
    cfg.weak = WeakAugment::Hflip { p: 1.5 };
    assert!(cfg.validate().is_err());
}

#[test]
fn split_arithmetic() {
    let plan = BudgetPlan { total: 30_000, cycles: 10, validation_fraction: 0.1 };
    assert_eq!((plan.validation_size(), plan.query_size(0)), (3000, 2700));
    let (val, q0) = initial_split(&PoolState::new(flat(30_000)), &plan, 1).unwrap();
    assert_eq!((val.len(), q0.len()), (3000, 2700));

    let plan = BudgetPlan { total: 300, cycles: 10, validation_fraction: 0.1 };
    let (val, q0) = initial_split(&PoolState::new(flat(1000)), &plan, 1).unwrap();
    assert_eq!((val.len(), q0.len()), (30, 27));

    let odd = BudgetPlan { total: 305, cycles: 10, validation_fraction: 0.1 };
    let sizes: Vec<usize> = (0..10).map(|k| odd.query_size(k)).collect();
    assert_eq!(sizes[..9], [27; 9]);
    assert_eq!(sizes[9], 27 + 4);
    assert_eq!(odd.validation_size() + sizes.iter().sum::<usize>(), 305);

    assert!(initial_split(&PoolState::new(flat(100)), &plan, 0).is_err());
    assert!(BudgetPlan { total: 5, cycles: 10, validation_fraction: 0.1 }.validate().is_err());
}

proptest! {
    #[test]
    fn split_sets_are_disjoint_sorted_and_seeded(
        total in 10usize..200,
        cycles in 1usize..6,
        frac in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let plan = BudgetPlan { total, cycles, validation_fraction: frac };
        prop_assume!(plan.validate().is_ok());
        let pool = PoolState::new(flat(total + 50));
        let (val, q0) = initial_split(&pool, &plan, seed).unwrap();
        prop_assert!(val.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(q0.windows(2).all(|w| w[0] < w[1]));
        let v: BTreeSet<usize> = val.iter().copied().collect();
        prop_assert!(q0.iter().all(|i| !v.contains(i)));
        prop_assert_eq!((val.len(), q0.len()), (plan.validation_size(), plan.query_size(0)));
        prop_assert_eq!(initial_split(&pool, &plan, seed).unwrap(), (val, q0));
        prop_assert_eq!(plan.validation_size() + (0..cycles).map(|k| plan.query_size(k)).sum::<usize>(), total);
    }

    #[test]
    fn statuses_stay_a_partition(ops in prop::collection::vec((0u8..4, prop::collection::btree_set(0usize..40, 0..6)), 1..25)) {
        let mut pool = PoolState::new(flat(40));
        let mut queried_before: BTreeSet<usize> = BTreeSet::new();
        for (op, idx) in ops {
            let labels: BTreeMap<usize, usize> = idx.iter().map(|&i| (i, i % 3)).collect();
            let snapshot = pool.clone();
            let result = match op {
                0 => pool.assign(&labels, SampleStatus::Queried),
                1 => pool.assign(&labels, SampleStatus::Pseudo),
                2 => pool.assign(&labels, SampleStatus::Validation),
                _ => { pool.clear_pseudo(); Ok(()) }
            };
            if result.is_err() {
                prop_assert_eq!(&pool, &snapshot);
            }
            let total = [SampleStatus::Unlabeled, SampleStatus::Queried, SampleStatus::Pseudo, SampleStatus::Validation]
                .iter()
                .map(|&s| pool.count(s))
                .sum::<usize>();
            prop_assert_eq!(total, 40);
            let q: BTreeSet<usize> = pool.queried_labels().keys().copied().collect();
            prop_assert_eq!(&q, &pool.indices_with(SampleStatus::Queried).into_iter().collect());
            let p: BTreeSet<usize> = pool.pseudo_labels().keys().copied().collect();
            prop_assert_eq!(p, pool.indices_with(SampleStatus::Pseudo).into_iter().collect());
            prop_assert!(queried_before.is_subset(&q));
            queried_before = q;
        }
    }
}

#[test]
fn assigning_a_labeled_sample_is_rejected() {
    let mut pool = PoolState::new(flat(5));
    pool.assign(&BTreeMap::from([(1, 0)]), SampleStatus::Queried).unwrap();
    let err = pool.assign(&BTreeMap::from([(0, 1), (1, 1)]), SampleStatus::Pseudo).unwrap_err();
    assert!(matches!(err, Error::RejectedInput(_)));
    assert_eq!(pool.status(0), SampleStatus::Unlabeled);
    assert!(pool.assign(&BTreeMap::from([(9, 0)]), SampleStatus::Queried).is_err());
    assert!(pool.check_unlabeled(&[2, 2]).is_err());
    assert_eq!(pool.unlabeled(), vec![0, 2, 3, 4]);
}

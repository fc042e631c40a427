mod common;

use common::trained_pair;
use proptest::prelude::*;
use stealkit::adversarial::*;
use stealkit::error::Error;
use stealkit::numkit::{MlpModel, MlpSpec};
use stealkit::rng;

fn random_model(seed: u64) -> MlpModel {
    MlpModel::new(MlpSpec::new(4, vec![6], 3).with_seed(seed)).unwrap()
}

proptest! {
    #[test]
    fn zero_epsilon_returns_the_input(
        x in prop::collection::vec(-3.0f64..3.0, 4),
        label in 0usize..3,
        seed in any::<u64>(),
        random_start in any::<bool>(),
    ) {
        let cfg = PgdConfig { random_start, seed, ..PgdConfig::new(0.0) };
        let adv = pgd_attack(&random_model(seed), &x, label, &cfg, &mut rng::rng(seed)).unwrap();
        prop_assert_eq!(adv, x);
    }

    #[test]
    fn examples_stay_in_the_ball_and_the_box(
        x in prop::collection::vec(0.0f64..=1.0, 4),
        label in 0usize..3,
        eps in 0.01f64..0.6,
        steps in 1usize..8,
        seed in any::<u64>(),
    ) {
        let cfg = PgdConfig { steps, clamp: Some((0.0, 1.0)), ..PgdConfig::new(eps) };
        let adv = pgd_attack(&random_model(seed % 17), &x, label, &cfg, &mut rng::rng(seed)).unwrap();
        for (a, b) in adv.iter().zip(&x) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!((a - b).abs() <= eps * (1.0 + 1e-12));
        }
        let r = random_sign_perturbation(&x, eps, Some((0.0, 1.0)), &mut rng::rng(seed));
        for (a, b) in r.iter().zip(&x) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!((a - b).abs() <= eps * (1.0 + 1e-12));
        }
    }
}

#[test]
fn unclamped_random_perturbation_sits_on_the_ball_corners() {
    let x = [0.5, -1.0, 2.0, 0.0];
    let r = random_sign_perturbation(&x, 0.3, None, &mut rng::rng(4));
    for (a, b) in r.iter().zip(&x) {
        assert!(((a - b).abs() - 0.3).abs() < 1e-15);
    }
}

#[test]
fn invalid_configs_and_inputs_are_rejected() {
    let m = random_model(1);
    let mut draw = rng::rng(0);
    for bad in [
        PgdConfig::new(-0.1),
        PgdConfig::new(f64::NAN),
        PgdConfig { steps: 0, ..PgdConfig::new(0.1) },
        PgdConfig { step_size: Some(0.2), ..PgdConfig::new(0.1) },
        PgdConfig { clamp: Some((1.0, 0.0)), ..PgdConfig::new(0.1) },
    ] {
        assert!(matches!(pgd_attack(&m, &[0.0; 4], 0, &bad, &mut draw), Err(Error::RejectedConfig(_))));
    }
    let boxed = PgdConfig { clamp: Some((0.0, 1.0)), ..PgdConfig::new(0.1) };
    assert!(matches!(pgd_attack(&m, &[2.0, 0.0, 0.0, 0.0], 0, &boxed, &mut draw), Err(Error::RejectedInput(_))));
    assert!(pgd_attack(&m, &[0.0; 3], 0, &PgdConfig::new(0.1), &mut draw).is_err());
    assert_eq!(PgdConfig::new(0.2).alpha(), 2.5 * 0.2 / 20.0);
    assert_eq!(PgdConfig { steps: 1, ..PgdConfig::new(0.2) }.alpha(), 0.2);
    assert_eq!(PgdConfig::image_default().epsilon, 8.0 / 255.0);
}

#[test]
fn adversarial_accuracy_falls_as_epsilon_grows() {
    let (test, source, victim) = trained_pair();
    let eps = 0.8;
    let mut src = Vec::new();
    for e in [0.0, eps / 2.0, eps] {
        let r = transferability(&source, &victim, &test, &PgdConfig { seed: 3, ..PgdConfig::new(e) }).unwrap();
        src.push(r.adv_acc_src);
    }
    assert!(src[0] >= src[1] && src[1] >= src[2], "{src:?}");
    assert!(src[2] < src[0]);
}

#[test]
fn pgd_beats_random_signs() {
    let (test, source, victim) = trained_pair();
    let cfg = PgdConfig { seed: 9, ..PgdConfig::new(0.8) };
    let pgd = transferability(&source, &victim, &test, &cfg).unwrap();
    let rand = random_transferability(&source, &victim, &test, &cfg).unwrap();
    assert!(pgd.adv_acc_src < rand.adv_acc_src, "{} vs {}", pgd.adv_acc_src, rand.adv_acc_src);
    assert_eq!(pgd.clean_acc_src, rand.clean_acc_src);
}

#[test]
fn report_counts_match_a_recount_of_the_rows() {
    let (test, source, victim) = trained_pair();
    let truth = test.labels().unwrap();
    for denominator in [Denominator::SourceFooled, Denominator::AllSamples] {
        let cfg = PgdConfig { seed: 5, denominator, ..PgdConfig::new(0.6) };
        let r = transferability(&source, &victim, &test, &cfg).unwrap();
        assert_eq!(r.rows.len(), test.len());
        let mut fooled = 0;
        let mut shared = 0;
        let mut clean_src = 0;
        for (i, (row, &y)) in r.rows.iter().zip(truth).enumerate() {
            let x = test.row(i);
            assert_eq!(row.sample_index, i);
            assert_eq!(row.clean_src, source.predict_label(x).unwrap());
            assert_eq!(row.clean_victim, victim.predict_label(x).unwrap());
            let adv = pgd_attack(&source, x, y, &cfg, &mut rng::rng(rng::derive(5, i as u64))).unwrap();
            assert_eq!(row.adv_src, source.predict_label(&adv).unwrap());
            assert_eq!(row.adv_victim, victim.predict_label(&adv).unwrap());
            fooled += usize::from(row.adv_src != y);
            shared += usize::from(row.adv_src != y && row.adv_victim != y);
            clean_src += usize::from(row.clean_src == y);
        }
        assert_eq!((r.source_fooled, r.shared_failures), (fooled, shared));
        let denom = match denominator {
            Denominator::SourceFooled => fooled,
            Denominator::AllSamples => test.len(),
        };
        assert_eq!(r.transferability, Some(shared as f64 / denom as f64));
        assert_eq!(r.clean_acc_src, clean_src as f64 / test.len() as f64);
    }
}

#[test]
fn transfer_csv_has_one_line_per_sample() {
    let (test, source, victim) = trained_pair();
    let r = transferability(&source, &victim, &test, &PgdConfig::new(0.3)).unwrap();
    let mut buf = Vec::new();
    write_transfer_csv(&mut buf, &r).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(TRANSFER_HEADER));
    let parsed: Vec<TransferRow> = lines
        .map(|l| {
            let v: Vec<usize> = l.split(',').map(|f| f.parse().unwrap()).collect();
            TransferRow { sample_index: v[0], clean_src: v[1], clean_victim: v[2], adv_src: v[3], adv_victim: v[4] }
        })
        .collect();
    assert_eq!(parsed, r.rows);
}

#[test]
fn unlabeled_data_is_rejected() {
    let (test, source, victim) = trained_pair();
    let bare = test.without_labels();
    assert!(matches!(transferability(&source, &victim, &bare, &PgdConfig::new(0.1)), Err(Error::RejectedInput(_))));
}

mod common;

use common::pairwise_auc;
use proptest::prelude::*;
use rand::Rng;
use ratchet_core::cohort::{synth_generate, tensorize, Binning, SplitMode, SynthConfig};
use ratchet_core::eval::*;
use ratchet_core::numcore::rng::seeded;
use ratchet_core::Error;

#[test]
fn auc_matches_pairwise_oracle_with_ties() {
    let mut rng = seeded(11);
    for _ in 0..1000 {
        let n = rng.random_range(2..=200);
        // Few distinct levels so ties are common.
        let levels = rng.random_range(1..=12);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.1).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        assert_eq!(auc_roc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
    }
}

#[test]
fn auc_example_and_edge_cases() {
    assert_eq!(auc_roc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    assert_eq!(auc_roc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(auc_roc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    assert!(matches!(auc_roc(&[0.1, 0.2], &[0, 0]), Err(Error::UndefinedMetric(_))));
    assert!(matches!(auc_roc(&[0.1], &[0, 1]), Err(Error::Shape(_))));
}

proptest! {
    #[test]
    fn auc_invariant_under_monotone_transform(
        pairs in prop::collection::vec((-5.0f64..5.0, 0u8..2), 2..150)
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let a = auc_roc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-3.0 * s).exp()) * 7.0 - 2.0).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3) + s).collect();
        prop_assert_eq!(a, auc_roc(&squashed, &labels).unwrap());
        prop_assert_eq!(a, auc_roc(&cubed, &labels).unwrap());
    }

    #[test]
    fn auc_complement_without_ties(
        raw in prop::collection::btree_set(-100_000i64..100_000, 2..150),
        seed in any::<u64>(),
    ) {
        let scores: Vec<f64> = raw.iter().map(|&v| v as f64 / 1000.0).collect();
        let mut rng = seeded(seed);
        let mut labels: Vec<u8> = (0..scores.len()).map(|_| rng.random_bool(0.5) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = auc_roc(&scores, &labels).unwrap() + auc_roc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn welch_is_antisymmetric(
        a in prop::collection::vec(0.0f64..1.0, 2..12),
        b in prop::collection::vec(0.0f64..1.0, 2..12),
    ) {
        let (ab, ba) = (welch_t_test(&a, &b), welch_t_test(&b, &a));
        if let (Ok(ab), Ok(ba)) = (ab, ba) {
            prop_assert_eq!(ab.t, -ba.t);
            prop_assert_eq!(ab.p, ba.p);
            prop_assert_eq!(ab.dof, ba.dof);
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }
    }
}

#[test]
fn welch_matches_reference_values() {
    // (a, b, t, p, dof) from an independent statistics library.
    let cases: [(&[f64], &[f64], f64, f64, f64); 4] = [
        (&[1.0, 2.0, 3.0], &[11.0, 12.0, 13.0], -12.24744871391589, 0.00025521674944192687, 4.0),
        (&[0.81, 0.79, 0.83, 0.80], &[0.78, 0.77, 0.80, 0.76, 0.79], 2.4804318924093445, 0.04588366460643051, 6.302353651176835),
        (&[0.5, 0.6], &[0.55, 0.9, 0.7], -1.4744195615489721, 0.24420770777098016, 2.7642064010450684),
        (
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
            &[1.5, 2.5, 2.0, 3.1, 5.0, 6.2, 4.4, 8.8, 9.1, 7.7],
            0.35937011693781035,
            0.7235209315839932,
            17.907581260712863,
        ),
    ];
    for (a, b, t, p, dof) in cases {
        let r = welch_t_test(a, b).unwrap();
        assert!((r.t - t).abs() < 1e-10 * t.abs().max(1.0), "t {} vs {t}", r.t);
        assert!((r.dof - dof).abs() < 1e-10 * dof, "dof {} vs {dof}", r.dof);
        assert!((r.p - p).abs() < 1e-8, "p {} vs {p}", r.p);
    }
    assert!(welch_t_test(&[1.0, 2.0, 3.0], &[11.0, 12.0, 13.0]).unwrap().p < 0.01);
}

#[test]
fn welch_identical_and_degenerate_inputs() {
    let a = [0.7, 0.72, 0.69];
    let r = welch_t_test(&a, &a).unwrap();
    assert_eq!((r.t, r.p), (0.0, 1.0));
    assert!(matches!(welch_t_test(&[0.5], &a), Err(Error::Statistics(_))));
    assert!(matches!(welch_t_test(&[0.5, 0.5], &[0.6, 0.6]), Err(Error::Statistics(_))));
}

fn metric(variant: &str, run: usize, auc: f64) -> RunMetric {
    RunMetric { variant: variant.into(), run, seed: 40 + run as u64, n_train: 100, n_val: 17, n_test: 33, auc, epoch_selected: 3 }
}

#[test]
fn report_shapes() {
    let one = report(&[metric("full", 0, 0.8), metric("full", 1, 0.82)]).unwrap();
    assert_eq!(one.summaries.len(), 1);
    assert!(one.comparisons.is_empty());
    assert!(!one.to_text().contains("pairwise"));

    let rows: Vec<RunMetric> =
        (0..3).flat_map(|i| [metric("full", i, 0.8 + 0.01 * i as f64), metric("no_gct", i, 0.7 + 0.02 * i as f64)]).collect();
    let r = report(&rows).unwrap();
    assert_eq!(r.comparisons.len(), 1);
    assert_eq!(r.summaries[0].variant, "full");
    assert!((r.summaries[0].mean - 0.81).abs() < 1e-12);
    assert!((r.summaries[0].std - 0.01).abs() < 1e-12);
    assert!((r.summaries[1].delta_vs_full.unwrap() - (0.72 - 0.81)).abs() < 1e-12);
    assert!(r.to_text().contains("0.810 ± 0.010"));
    assert_eq!(format_mean_std(0.8, 0.002), "0.800 ± 0.002");
}

#[test]
fn metrics_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let rows = vec![metric("full", 0, 0.812_345_678_912_345_6), metric("no_gct+no_tl", 1, 1.0 / 3.0), metric("logreg", 2, 0.5)];
    write_metrics_csv(&path, &rows).unwrap();
    assert_eq!(load_metrics_csv(&path).unwrap(), rows);
}

#[test]
fn variant_names_round_trip() {
    for name in ["full", "logreg", "no_gct", "no_tl", "no_focal", "no_sampler", "child_tuning", "no_gct+no_tl", "no_focal+child_tuning"] {
        let v: Variant = name.parse().unwrap();
        assert_eq!(v.to_string(), name);
    }
    assert_eq!("no_tl+no_gct".parse::<Variant>().unwrap().to_string(), "no_gct+no_tl");
    assert!(matches!("no_such".parse::<Variant>(), Err(Error::Config(_))));
}

fn tiny_experiment(n_runs: usize) -> Vec<RunMetric> {
    let s = synth_generate(&SynthConfig { n_stays: 160, prevalence: 0.2, ..SynthConfig::default() }, &mut seeded(5)).unwrap();
    let (tensors, _) = tensorize(&s.records, &s.schema, &Binning::default()).unwrap();
    let mut cfg = ExperimentConfig { n_runs, base_seed: 9, split_mode: SplitMode::Random { test_fraction: 0.3 }, ..Default::default() };
    for (k, v) in [("d_model", "8"), ("n_heads", "2"), ("d_ff", "16"), ("n_layers", "1"), ("gct_layers", "1")] {
        cfg.model.set(k, v).unwrap();
    }
    cfg.pretrain.epochs = 1;
    cfg.finetune.epochs = 2;
    cfg.finetune.warmup_steps = 5;
    cfg.pretrain.warmup_steps = 2;
    cfg.logreg.steps = 50;
    cfg.variants = vec![Variant::full(), "no_gct+no_tl".parse().unwrap(), Variant::logreg()];
    run_experiments(&tensors, &s.schema, &cfg).unwrap()
}

#[test]
fn single_run_is_one_cycle_and_repeatable() {
    let a = tiny_experiment(1);
    assert_eq!(a.len(), 3);
    for m in &a {
        assert_eq!((m.run, m.seed), (0, 9));
        assert_eq!(m.n_train + m.n_val + m.n_test, 160);
        assert!((0.0..=1.0).contains(&m.auc));
    }
    assert_eq!(a, tiny_experiment(1));
}

#[test]
fn logistic_baseline_learns_a_planted_signal() {
    let s = synth_generate(&SynthConfig { n_stays: 2000, prevalence: 0.2, ..SynthConfig::default() }, &mut seeded(8)).unwrap();
    let (tensors, _) = tensorize(&s.records, &s.schema, &Binning::default()).unwrap();
    let mut rng = seeded(1);
    let p = ratchet_core::cohort::split_and_normalize(
        &tensors,
        &s.schema,
        Default::default(),
        &SplitMode::Random { test_fraction: 0.3 },
        0.1,
        &mut rng,
    )
    .unwrap();
    let lr = LogisticRegression::fit(&p.splits.train, &LogregPlan::default()).unwrap();
    let labels: Vec<u8> = p.splits.test.iter().map(|t| t.label).collect();
    let auc = auc_roc(&lr.predict(&p.splits.test), &labels).unwrap();
    assert!(auc > 0.6, "logistic baseline AUC {auc}");
}

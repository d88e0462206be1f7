mod common;

use common::random_stay;
use rand::Rng;
use ratchet_core::cohort::*;
use ratchet_core::explain::*;
use ratchet_core::model::{EmbedderKind, ModelConfig, RatchetModel};
use ratchet_core::numcore::rng::seeded;
use ratchet_core::train::{finetune, AlphaMode, SamplerKind, TrainPlan, TrainState};
use ratchet_core::Error;

fn micro(k: usize, m: usize, p_max: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        dropout: 0.0,
        p_max,
        k,
        m,
        embedder: EmbedderKind::Gct,
        gct_layers: 1,
        gct_kl_weight: 0.01,
    }
}

fn micro_model(k: usize, m: usize, p: usize, seed: u64) -> RatchetModel<f64> {
    RatchetModel::new(micro(k, m, p), &mut seeded(seed)).unwrap()
}

/// `f(x) = Σ w ⊙ x`, the closed-form reference for expected gradients.
struct Linear {
    w: Vec<f64>,
}

impl LogitModel for Linear {
    fn logits_and_grads(&self, points: &[Vec<f64>], _pad: &[bool]) -> ratchet_core::Result<Vec<(f64, Vec<f64>)>> {
        Ok(points.iter().map(|x| (x.iter().zip(&self.w).map(|(a, b)| a * b).sum(), self.w.clone())).collect())
    }
}

/// Copy of `template` with fresh values on the same timeframe grid.
fn same_grid(template: &TimeframeTensor, rng: &mut impl Rng) -> TimeframeTensor {
    let mut s = random_stay(template.p_max(), template.k, template.m, 1, 0, rng);
    s.pad_mask = template.pad_mask.clone();
    let l = template.l();
    for j in 0..template.p_max() {
        for c in 0..l {
            s.values[j * l + c] = if template.pad_mask[j] { rng.random_range(-2.0..2.0) } else { 0.0 };
        }
    }
    s
}

#[test]
fn identical_baseline_gives_zero() {
    let model = micro_model(2, 2, 5, 1);
    let mut rng = seeded(2);
    let x = random_stay(5, 2, 2, 4, 1, &mut rng);
    let a = expected_gradients(&model, &x, std::slice::from_ref(&x), 16, &mut rng).unwrap();
    assert!(a.values.iter().all(|&v| v == 0.0));
}

#[test]
fn empty_baselines_are_rejected() {
    let model = micro_model(2, 2, 5, 1);
    let x = random_stay(5, 2, 2, 4, 1, &mut seeded(0));
    assert!(matches!(expected_gradients(&model, &x, &[], 8, &mut seeded(0)), Err(Error::Config(_))));
}

#[test]
fn linear_model_is_exact_for_any_baseline_count() {
    let mut rng = seeded(3);
    let (p, k, m) = (6, 3, 2);
    let x = random_stay(p, k, m, 4, 1, &mut rng);
    let w: Vec<f64> = (0..p * (k + m)).map(|_| rng.random_range(-1.0..1.0)).collect();
    let model = Linear { w: w.clone() };
    for nb in [1, 2, 3, 7, 10] {
        let baselines: Vec<TimeframeTensor> = (0..nb).map(|_| same_grid(&x, &mut rng)).collect();
        for n_samples in [1, 5, 64] {
            let a = expected_gradients(&model, &x, &baselines, n_samples, &mut rng).unwrap();
            for i in 0..p * (k + m) {
                let eb = baselines.iter().map(|b| b.values[i] as f64).sum::<f64>() / nb as f64;
                let want = (x.values[i] as f64 - eb) * w[i];
                assert!((a.values[i] - want).abs() < 1e-5, "nb={nb} n={n_samples} cell {i}");
            }
        }
    }
}

#[test]
fn baselines_are_aligned_to_the_explained_grid() {
    let mut rng = seeded(4);
    let x = random_stay(6, 2, 1, 5, 1, &mut rng);
    let b = random_stay(6, 2, 1, 2, 0, &mut rng);
    let aligned = align_baseline(&x, &b).unwrap();
    let l = 3;
    let first_b = 4;
    for j in 0..6 {
        for c in 0..l {
            let want = match (x.pad_mask[j], b.pad_mask[j]) {
                (false, _) => 0.0,
                (true, true) => b.values[j * l + c],
                (true, false) => b.values[first_b * l + c],
            };
            assert_eq!(aligned[j * l + c], want as f64);
        }
    }
}

#[test]
fn completeness_on_the_micro_model() {
    let (p, k, m) = (6, 1, 2);
    let model = micro_model(k, m, p, 5);
    let mut rng = seeded(6);
    let baselines: Vec<TimeframeTensor> = (0..10).map(|i| random_stay(p, k, m, 2 + i % 5, 0, &mut rng)).collect();
    let mut checked = 0;
    for i in 0..8 {
        let x = random_stay(p, k, m, 1 + i % p, 1, &mut rng);
        let a = expected_gradients(&model, &x, &baselines, 512, &mut rng).unwrap();
        let target = a.logit - a.baseline_logit;
        if target.abs() < 1e-3 {
            continue;
        }
        checked += 1;
        assert!(a.completeness_gap() < 0.05, "stay {i}: sum {} vs {target}", a.total());
    }
    assert!(checked >= 6);
}

#[test]
fn constant_columns_get_no_attribution() {
    let (p, k, m) = (5, 2, 2);
    let model = micro_model(k, m, p, 7);
    let mut rng = seeded(8);
    let mut stays: Vec<TimeframeTensor> = (0..6).map(|i| random_stay(p, k, m, 2 + i % 4, 0, &mut rng)).collect();
    for s in &mut stays {
        for j in 0..p {
            if s.pad_mask[j] {
                s.values[j * (k + m) + 1] = 0.75;
            }
        }
    }
    let a = expected_gradients(&model, &stays[0], &stays[1..], 32, &mut rng).unwrap();
    for j in 0..p {
        assert_eq!(a.values[j * (k + m) + 1], 0.0);
    }
    assert!(a.values.iter().any(|&v| v != 0.0));
}

#[test]
fn attribution_is_deterministic() {
    let model = micro_model(2, 1, 5, 9);
    let mut rng = seeded(10);
    let stays: Vec<TimeframeTensor> = (0..12).map(|_| random_stay(5, 2, 1, 3, 0, &mut rng)).collect();
    let cfg = ExplainConfig { n_stays: 3, n_baselines: 4, n_samples: 16, seed: 77 };
    let a = explain_stays(&model, &stays[..6], &stays[6..], &cfg).unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(a, explain_stays(&model, &stays[..6], &stays[6..], &cfg).unwrap());
}

fn schema(k: usize, m: usize) -> FeatureSchema {
    let num = (0..k).map(|i| NumericalFeature { id: format!("n{i}"), min: -1e9, max: 1e9 }).collect();
    FeatureSchema::new(num, (0..m).map(|i| format!("c{i}")).collect(), None).unwrap()
}

#[test]
fn single_nonzero_cell_ranks_first() {
    let (p, k, m) = (4, 2, 2);
    let x = random_stay(p, k, m, 3, 1, &mut seeded(1));
    let mut values = vec![0.0; p * (k + m)];
    values[3 * (k + m) + 2] = -0.4;
    let a = Attribution { stay_id: x.stay_id.clone(), p, l: k + m, values, pad_mask: x.pad_mask.clone(), logit: 0.0, baseline_logit: 0.4 };
    let rows = summarize(&[a], &[x], &schema(k, m), None).unwrap();
    assert_eq!(rows[0].feature_id, "c0");
    assert_eq!(rows[0].rank, 1);
    assert!((rows[0].mean_abs_attr - 0.4 / 3.0).abs() < 1e-12);
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r.mean_abs_attr == 0.0 && r.sign_correlation.is_none()));
}

#[test]
fn summary_ignores_stay_order() {
    let (p, k, m) = (5, 2, 1);
    let model = micro_model(k, m, p, 11);
    let mut rng = seeded(12);
    let mut stays: Vec<TimeframeTensor> = (0..9).map(|_| random_stay(p, k, m, 3, 0, &mut rng)).collect();
    for (i, s) in stays.iter_mut().enumerate() {
        s.stay_id = format!("S{i}");
    }
    let cfg = ExplainConfig { n_stays: 5, n_baselines: 4, n_samples: 8, seed: 1 };
    let attrs = explain_stays(&model, &stays[..4], &stays[4..], &cfg).unwrap();
    let inputs: Vec<TimeframeTensor> =
        attrs.iter().map(|a| stays.iter().find(|s| s.stay_id == a.stay_id).unwrap().clone()).collect();
    let s = schema(k, m);
    let fwd = summarize(&attrs, &inputs, &s, None).unwrap();
    let (mut ra, mut ri) = (attrs.clone(), inputs.clone());
    ra.reverse();
    ri.reverse();
    ra.swap(0, 2);
    ri.swap(0, 2);
    assert_eq!(fwd, summarize(&ra, &ri, &s, None).unwrap());
    assert_eq!(summarize(&attrs, &inputs, &s, Some(2)).unwrap(), fwd[..2].to_vec());
}

#[test]
fn planted_signal_features_rank_on_top() {
    // Linear-in-the-inputs signal on f0..f2 so a short fine-tune recovers it.
    let cfg = SynthConfig {
        n_stays: 700,
        prevalence: 0.3,
        drift_features: vec![0, 1, 2],
        interaction_pair: (3, 4),
        interaction_weight: 0.0,
        drift_weight: 3.0,
        ..SynthConfig::default()
    };
    let s = synth_generate(&cfg, &mut seeded(21)).unwrap();
    let prepared = prepare(&s.records, &s.schema, &Binning::default(), &SplitMode::Random { test_fraction: 0.2 }, 0.1, &mut seeded(22))
        .unwrap();
    let mut mc = micro(prepared.schema.k(), prepared.schema.m(), 30);
    mc.d_model = 16;
    mc.embedder = EmbedderKind::Linear;
    let model: RatchetModel<f32> = RatchetModel::new(mc, &mut seeded(23)).unwrap();
    let mut plan = TrainPlan::finetune();
    plan.epochs = 6;
    plan.dropout = 0.0;
    plan.base_lr = 3e-3;
    plan.warmup_steps = 20;
    plan.focal_gamma = 0.0;
    plan.focal_alpha = AlphaMode::Fixed(0.5);
    plan.sampler = SamplerKind::Uniform;
    let mut state = TrainState::new(model);
    let splits = &prepared.splits;
    finetune(&mut state, &splits.train, &splits.val, &plan, None).unwrap();
    let ecfg = ExplainConfig { n_stays: 40, n_baselines: 20, n_samples: 32, seed: 3 };
    let attrs = explain_stays(&state.model, &splits.train, &splits.test, &ecfg).unwrap();
    let inputs: Vec<TimeframeTensor> =
        attrs.iter().map(|a| splits.test.iter().find(|t| t.stay_id == a.stay_id).unwrap().clone()).collect();
    let rows = summarize(&attrs, &inputs, &prepared.schema, None).unwrap();
    let top: Vec<&str> = rows[..3].iter().map(|r| r.feature_id.as_str()).collect();
    for f in ["f0", "f1", "f2"] {
        assert!(top.contains(&f), "top features {top:?}");
    }
    // Each signal feature raises risk with its value.
    for r in &rows[..3] {
        assert!(r.sign_correlation.unwrap() > 0.0, "{r:?}");
    }
}

#[test]
fn csv_outputs_have_expected_shape() {
    let (p, k, m) = (4, 1, 1);
    let x = random_stay(p, k, m, 2, 1, &mut seeded(5));
    let a = Attribution { stay_id: x.stay_id.clone(), p, l: 2, values: vec![0.5; p * 2], pad_mask: x.pad_mask.clone(), logit: 1.0, baseline_logit: 0.0 };
    let dir = tempfile::tempdir().unwrap();
    let s = schema(k, m);
    write_attributions_csv(&dir.path().join("attr.csv"), std::slice::from_ref(&a), &s).unwrap();
    let text = std::fs::read_to_string(dir.path().join("attr.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "stay_id,timeframe,feature_id,value");
    assert_eq!(text.lines().count(), 1 + 2 * 2);
    let rows = summarize(&[a], &[x], &s, None).unwrap();
    write_summary_csv(&dir.path().join("summary.csv"), &rows).unwrap();
    let text = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "feature_id,mean_abs_attr,sign_correlation,rank");
    assert_eq!(text.lines().count(), 3);
}

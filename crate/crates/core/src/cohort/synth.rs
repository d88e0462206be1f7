//! Synthetic cohorts with a planted, known signal.
//!
//! Each stay draws standard-normal latents: a drift `u` and one level `z_f` per
//! numerical feature. The true log-odds are
//! `c + s·(w_drift·u + w_inter·z_a·z_b)`, where `u` shows up only as a ramp over the
//! last 24 h before the index time in the drift features and `z_a`, `z_b` are the
//! levels of the two interaction features. No additive function of the inputs
//! recovers the product term.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson, StandardNormal};

use crate::cohort::io::GroundTruth;
use crate::cohort::record::{CohortRecord, Event, FeatureSchema, NumericalFeature, StudyDesign};
use crate::error::{Error, Result};
use crate::numcore::rng::seeded;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_stays: usize,
    /// Numerical features.
    pub k: usize,
    /// Code groups.
    pub m: usize,
    /// Raw code variants per group, mapped through the code-group table.
    pub variants_per_code: usize,
    pub prevalence: f64,
    /// Scales both planted effects; 0 makes labels independent of the features.
    pub signal_strength: f64,
    pub drift_weight: f64,
    pub interaction_weight: f64,
    pub drift_features: Vec<usize>,
    pub interaction_pair: (usize, usize),
    /// Size of the drift ramp at the index time, in feature standard deviations.
    pub drift_scale: f64,
    pub drift_window_hours: f64,
    /// Per-measurement noise, in feature standard deviations.
    pub noise: f64,
    pub mean_interval_hours: f64,
    /// Expected occurrences of each code group per day.
    pub code_rate_per_day: f64,
    pub outlier_rate: f64,
    pub years: (i32, i32),
    pub min_index_hours: f64,
    pub max_index_hours: f64,
    /// Events keep coming for this long after the index time.
    pub post_index_hours: f64,
    pub design: StudyDesign,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_stays: 3000,
            k: 8,
            m: 6,
            variants_per_code: 2,
            prevalence: 0.044,
            signal_strength: 1.0,
            drift_weight: 1.5,
            interaction_weight: 2.5,
            drift_features: vec![0],
            interaction_pair: (1, 2),
            drift_scale: 2.0,
            drift_window_hours: 24.0,
            noise: 0.5,
            mean_interval_hours: 2.0,
            code_rate_per_day: 2.0,
            outlier_rate: 0.005,
            years: (2008, 2019),
            min_index_hours: 48.0,
            max_index_hours: 144.0,
            post_index_hours: 72.0,
            design: StudyDesign::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad(format!("prevalence must lie in (0, 1), got {}", self.prevalence));
        }
        if self.n_stays == 0 || self.k == 0 || self.variants_per_code == 0 {
            return bad("n_stays, k and variants_per_code must be positive".into());
        }
        let (a, b) = self.interaction_pair;
        if a == b || a >= self.k || b >= self.k || self.drift_features.iter().any(|&f| f >= self.k) {
            return bad(format!("signal features {:?} / {:?} do not fit k={}", self.drift_features, self.interaction_pair, self.k));
        }
        if self.drift_features.iter().any(|f| *f == a || *f == b) {
            return bad("drift and interaction features must differ".into());
        }
        if !(self.signal_strength >= 0.0) || !(self.mean_interval_hours > 0.0) || !(self.code_rate_per_day >= 0.0) {
            return bad("signal_strength, mean_interval_hours and code_rate_per_day must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.outlier_rate) || !(self.noise >= 0.0) {
            return bad("outlier_rate must lie in [0, 1) and noise must be non-negative".into());
        }
        if self.years.0 > self.years.1 || !(0.0 < self.min_index_hours && self.min_index_hours <= self.max_index_hours) {
            return bad("invalid year or index-time range".into());
        }
        Ok(())
    }

    pub fn signal_feature_ids(&self) -> Vec<String> {
        let mut ids: Vec<usize> = self.drift_features.clone();
        ids.extend([self.interaction_pair.0, self.interaction_pair.1]);
        ids.iter().map(|&f| feature_id(f)).collect()
    }
}

fn feature_id(f: usize) -> String {
    format!("f{f}")
}

/// Per-feature center and spread; valid range is `center ± 8·scale`.
fn feature_scale(f: usize) -> (f64, f64) {
    (50.0 + 10.0 * f as f64, 5.0 + f as f64)
}

#[derive(Clone, Debug)]
pub struct SynthCohort {
    /// Records carry raw code variants; run them through `conform_to_schema`.
    pub records: Vec<CohortRecord>,
    pub schema: FeatureSchema,
    pub ground_truth: Vec<GroundTruth>,
    pub signal_features: Vec<String>,
    /// Fitted log-odds intercept.
    pub intercept: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intercept giving the target prevalence, by bisection on a fixed Monte Carlo sample.
fn fit_intercept(cfg: &SynthConfig) -> f64 {
    let (wd, wi) = (cfg.signal_strength * cfg.drift_weight, cfg.signal_strength * cfg.interaction_weight);
    let mut rng = seeded(0x0b5e_55ed);
    let scores: Vec<f64> = (0..100_000)
        .map(|_| {
            let (u, a, b): (f64, f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            wd * u + wi * a * b
        })
        .collect();
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let p = scores.iter().map(|s| sigmoid(mid + s)).sum::<f64>() / scores.len() as f64;
        if p < cfg.prevalence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn synth_schema(cfg: &SynthConfig) -> Result<FeatureSchema> {
    let numerical = (0..cfg.k)
        .map(|f| {
            let (c, s) = feature_scale(f);
            NumericalFeature { id: feature_id(f), min: c - 8.0 * s, max: c + 8.0 * s }
        })
        .collect();
    let categorical: Vec<String> = (0..cfg.m).map(|c| format!("C{c}")).collect();
    let map: BTreeMap<String, String> = categorical
        .iter()
        .flat_map(|g| (0..cfg.variants_per_code).map(move |v| (format!("{g}.{v}"), g.clone())))
        .collect();
    FeatureSchema::new(numerical, categorical, Some(map))
}

pub fn synth_generate(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<SynthCohort> {
    cfg.validate()?;
    let schema = synth_schema(cfg)?;
    let intercept = fit_intercept(cfg);
    let (wd, wi) = (cfg.signal_strength * cfg.drift_weight, cfg.signal_strength * cfg.interaction_weight);
    let gap = Exp::new(1.0 / cfg.mean_interval_hours).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let (ia, ib) = cfg.interaction_pair;

    let mut records = Vec::with_capacity(cfg.n_stays);
    let mut truth = Vec::with_capacity(cfg.n_stays);
    for i in 0..cfg.n_stays {
        let stay_id = format!("S{i:05}");
        let admission_year = rng.random_range(cfg.years.0..=cfg.years.1);
        let index_time = (rng.random_range(cfg.min_index_hours..=cfg.max_index_hours) * 100.0).round() / 100.0;
        let u: f64 = StandardNormal.sample(rng);
        let z: Vec<f64> = (0..cfg.k).map(|_| StandardNormal.sample(rng)).collect();
        let logit = intercept + wd * u + wi * z[ia] * z[ib];
        let p = sigmoid(logit);
        let label = rng.random_bool(p) as u8;

        let end = index_time + cfg.post_index_hours;
        let mut events = Vec::new();
        for f in 0..cfg.k {
            let (center, scale) = feature_scale(f);
            let drifts = cfg.drift_features.contains(&f);
            let mut t = gap.sample(rng) * rng.random::<f64>();
            while t < end {
                let ramp = ((t - (index_time - cfg.drift_window_hours)) / cfg.drift_window_hours).clamp(0.0, 1.0);
                let shift = if drifts { cfg.drift_scale * u * ramp } else { 0.0 };
                let mut v = center + scale * (z[f] + shift + noise.sample(rng));
                if rng.random_bool(cfg.outlier_rate) {
                    v *= 10.0;
                }
                events.push(Event::numerical(feature_id(f), round2(v), round2(t)));
                t += gap.sample(rng);
            }
        }
        if cfg.code_rate_per_day > 0.0 {
            let count = Poisson::new(cfg.code_rate_per_day * end / 24.0).map_err(|e| Error::Config(e.to_string()))?;
            for c in 0..cfg.m {
                for _ in 0..count.sample(rng) as usize {
                    let v = rng.random_range(0..cfg.variants_per_code);
                    events.push(Event::categorical(format!("C{c}.{v}"), round2(rng.random_range(0.0..end))));
                }
            }
        }
        events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        records.push(CohortRecord {
            stay_id: stay_id.clone(),
            admission_year,
            events,
            index_time,
            label,
            t1_hours: cfg.design.t1_hours,
            t2_hours: cfg.design.t2_hours,
        });
        truth.push(GroundTruth { stay_id, bayes_score: p, label });
    }
    Ok(SynthCohort { records, schema, ground_truth: truth, signal_features: cfg.signal_feature_ids(), intercept })
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prevalence_must_be_open_interval() {
        for p in [0.0, 1.0, -0.1, f64::NAN] {
            let cfg = SynthConfig { prevalence: p, ..SynthConfig::default() };
            assert!(matches!(synth_generate(&cfg, &mut seeded(0)), Err(Error::Config(_))));
        }
    }

    #[test]
    fn zero_signal_intercept_is_logit_prevalence() {
        let cfg = SynthConfig { signal_strength: 0.0, ..SynthConfig::default() };
        let c = fit_intercept(&cfg);
        assert!((c - (0.044f64 / 0.956).ln()).abs() < 1e-9);
    }

    #[test]
    fn records_are_valid_and_sorted() {
        let cfg = SynthConfig { n_stays: 20, ..SynthConfig::default() };
        let s = synth_generate(&cfg, &mut seeded(3)).unwrap();
        assert_eq!(s.records.len(), 20);
        for r in &s.records {
            r.validate().unwrap();
            assert!(r.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
            assert!(r.events.iter().any(|e| e.timestamp > r.index_time));
        }
        assert_eq!(s.signal_features, vec!["f0", "f1", "f2"]);
    }
}

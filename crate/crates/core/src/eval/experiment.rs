//! Repeated-split experiment harness over model variants.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::info;

use crate::cohort::{split_and_normalize, FeatureSchema, QualityReport, SplitMode, TimeframeTensor};
use crate::error::{Error, Result};
use crate::eval::auc::auc_roc;
use crate::eval::logreg::{LogisticRegression, LogregPlan};
use crate::model::{EmbedderKind, ModelConfig, RatchetModel};
use crate::numcore::rng::{derive, Stream};
use crate::train::{finetune, pretrain, AlphaMode, SamplerKind, TrainPlan, TrainState};

const TOGGLES: [&str; 5] = ["no_gct", "no_tl", "no_focal", "no_sampler", "child_tuning"];

/// One point of the ablation grid. Parsed from `full`, `logreg`, or toggles joined
/// by `+`, e.g. `no_gct+no_tl`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Variant {
    pub gct: bool,
    pub transfer: bool,
    pub focal: bool,
    pub sampler: bool,
    pub child_tuning: bool,
    pub logreg: bool,
}

impl Variant {
    pub fn full() -> Self {
        Variant { gct: true, transfer: true, focal: true, sampler: true, child_tuning: false, logreg: false }
    }

    pub fn logreg() -> Self {
        Variant { logreg: true, ..Variant::full() }
    }

    /// Model config and plans for this variant derived from the full-model ones.
    pub fn apply(&self, model: &ModelConfig, finetune: &TrainPlan) -> (ModelConfig, TrainPlan) {
        let mut model = model.clone();
        let mut plan = finetune.clone();
        if !self.gct {
            model.embedder = EmbedderKind::Linear;
        }
        if !self.focal {
            plan.focal_gamma = 0.0;
            plan.focal_alpha = AlphaMode::Fixed(0.5);
        }
        if !self.sampler {
            plan.sampler = SamplerKind::Uniform;
        }
        plan.child_tuning.enabled = self.child_tuning;
        (model, plan)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "full" => return Ok(Variant::full()),
            "logreg" => return Ok(Variant::logreg()),
            _ => {}
        }
        let mut v = Variant::full();
        for part in s.split('+') {
            match part.trim() {
                "no_gct" => v.gct = false,
                "no_tl" => v.transfer = false,
                "no_focal" => v.focal = false,
                "no_sampler" => v.sampler = false,
                "child_tuning" => v.child_tuning = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown variant part `{other}`; expected full, logreg or a `+` list of {}",
                        TOGGLES.join(", ")
                    )))
                }
            }
        }
        Ok(v)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.logreg {
            return f.write_str("logreg");
        }
        let on = [!self.gct, !self.transfer, !self.focal, !self.sampler, self.child_tuning];
        let parts: Vec<&str> = TOGGLES.iter().zip(on).filter(|(_, b)| *b).map(|(n, _)| *n).collect();
        if parts.is_empty() {
            f.write_str("full")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub base_seed: u64,
    pub n_runs: usize,
    pub split_mode: SplitMode,
    pub val_fraction: f64,
    /// Full-model architecture; `k` and `m` are taken from the data.
    pub model: ModelConfig,
    pub pretrain: TrainPlan,
    pub finetune: TrainPlan,
    pub logreg: LogregPlan,
    pub variants: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            base_seed: 0,
            n_runs: 10,
            split_mode: SplitMode::default_by_year(),
            val_fraction: 0.15,
            model: ModelConfig::default(),
            pretrain: TrainPlan::pretrain(),
            finetune: TrainPlan::finetune(),
            logreg: LogregPlan::default(),
            variants: vec![Variant::full()],
        }
    }
}

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetric {
    pub variant: String,
    pub run: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub auc: f64,
    pub epoch_selected: usize,
}

/// Runs every variant on `n_runs` fresh splits. Run `i` uses seed `base_seed + i`
/// for its split, initialization and training streams, shared by all variants so
/// comparisons are paired.
pub fn run_experiments(
    tensors: &[TimeframeTensor],
    schema: &FeatureSchema,
    cfg: &ExperimentConfig,
) -> Result<Vec<RunMetric>> {
    if cfg.variants.is_empty() {
        return Err(Error::Config("no variants to run".into()));
    }
    if cfg.n_runs == 0 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    let mut out = Vec::new();
    for run in 0..cfg.n_runs {
        let seed = cfg.base_seed + run as u64;
        let started = Instant::now();
        let mut split_rng = derive(seed, Stream::Split, 0);
        let prepared =
            split_and_normalize(tensors, schema, QualityReport::default(), &cfg.split_mode, cfg.val_fraction, &mut split_rng)?;
        let splits = &prepared.splits;
        let mut base = cfg.model.clone();
        base.k = prepared.schema.k();
        base.m = prepared.schema.m();
        base.p_max = tensors.first().map_or(base.p_max, TimeframeTensor::p_max);
        // Pretrained weights depend only on the architecture, so variants share them.
        let mut pretrained: BTreeMap<String, RatchetModel<f32>> = BTreeMap::new();
        for variant in &cfg.variants {
            let (auc, epoch_selected) = if variant.logreg {
                let lr = LogisticRegression::fit(&splits.train, &cfg.logreg)?;
                (auc_roc(&lr.predict(&splits.test), &labels(&splits.test))?, cfg.logreg.steps)
            } else {
                let (model_cfg, mut plan) = variant.apply(&base, &cfg.finetune);
                plan.seed = seed;
                let init = if variant.transfer {
                    let key = model_cfg.embedder.to_string();
                    if !pretrained.contains_key(&key) {
                        let model = RatchetModel::new(model_cfg.clone(), &mut derive(seed, Stream::Init, 0))?;
                        let mut state = TrainState::new(model);
                        let mut pplan = cfg.pretrain.clone();
                        pplan.seed = seed;
                        pretrain(&mut state, &splits.train, &pplan, None)?;
                        pretrained.insert(key.clone(), state.model);
                    }
                    pretrained[&key].clone()
                } else {
                    RatchetModel::new(model_cfg.clone(), &mut derive(seed, Stream::Init, 0))?
                };
                let mut state = TrainState::new(init);
                let report = finetune(&mut state, &splits.train, &splits.val, &plan, None)?;
                let scores = state.model.predict(&splits.test, 256)?;
                (auc_roc(&scores, &labels(&splits.test))?, report.best_epoch)
            };
            info!("run {run} seed {seed} {variant}: test AUC {auc:.4}");
            out.push(RunMetric {
                variant: variant.to_string(),
                run,
                seed,
                n_train: splits.train.len(),
                n_val: splits.val.len(),
                n_test: splits.test.len(),
                auc,
                epoch_selected,
            });
        }
        info!("run {run} finished in {:.1}s", started.elapsed().as_secs_f64());
    }
    Ok(out)
}

fn labels(stays: &[TimeframeTensor]) -> Vec<u8> {
    stays.iter().map(|t| t.label).collect()
}

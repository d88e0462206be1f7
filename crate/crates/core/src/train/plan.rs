use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaMode {
    /// `α_pos = n₀ / (n₀ + n₁)` on the training split.
    InverseFrequency,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    /// Inverse-class-frequency draws with replacement.
    Weighted,
    /// A fresh permutation each epoch.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChildTuning {
    pub enabled: bool,
    /// Fraction of parameter entries left trainable, `p_F`.
    pub keep_fraction: f64,
    pub fisher_batches: usize,
}

impl Default for ChildTuning {
    fn default() -> Self {
        ChildTuning { enabled: false, keep_fraction: 0.3, fisher_batches: 8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub stage: Stage,
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub dropout: f64,
    pub focal_gamma: f64,
    pub focal_alpha: AlphaMode,
    pub child_tuning: ChildTuning,
    pub sampler: SamplerKind,
    /// Fraction of each stay's real timeframes masked during pretraining.
    pub mask_fraction: f64,
    pub seed: u64,
}

impl TrainPlan {
    pub fn pretrain() -> Self {
        TrainPlan {
            stage: Stage::Pretrain,
            batch_size: 32,
            epochs: 5,
            base_lr: 1e-4,
            weight_decay: 0.2,
            warmup_steps: 20,
            dropout: 0.1,
            focal_gamma: 2.0,
            focal_alpha: AlphaMode::InverseFrequency,
            child_tuning: ChildTuning::default(),
            sampler: SamplerKind::Uniform,
            mask_fraction: 0.15,
            seed: 0,
        }
    }

    pub fn finetune() -> Self {
        TrainPlan {
            stage: Stage::Finetune,
            batch_size: 17,
            epochs: 20,
            base_lr: 1e-3,
            weight_decay: 0.3,
            warmup_steps: 100,
            dropout: 0.5,
            sampler: SamplerKind::Weighted,
            ..TrainPlan::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.weight_decay >= 0.0) || !(self.focal_gamma >= 0.0) {
            return bad("weight_decay and focal_gamma must be non-negative".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if let AlphaMode::Fixed(a) = self.focal_alpha {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("focal alpha must lie in [0, 1], got {a}"));
            }
        }
        let ct = &self.child_tuning;
        if !(ct.keep_fraction > 0.0 && ct.keep_fraction <= 1.0) {
            return bad(format!("child-tuning keep fraction must lie in (0, 1], got {}", ct.keep_fraction));
        }
        if ct.enabled && ct.fisher_batches == 0 {
            return bad("fisher_batches must be at least 1".into());
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction <= 1.0) {
            return bad(format!("mask_fraction must lie in (0, 1], got {}", self.mask_fraction));
        }
        Ok(())
    }

    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: FromStr>(key: &str, v: &str) -> Result<V> {
            v.trim().parse().map_err(|_| Error::Config(format!("invalid value `{v}` for {key}")))
        }
        let v = value.trim();
        match key {
            "batch_size" => self.batch_size = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "base_lr" => self.base_lr = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "warmup_steps" => self.warmup_steps = num(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "focal_gamma" => self.focal_gamma = num(key, v)?,
            "focal_alpha" => {
                self.focal_alpha = match v {
                    "inverse_frequency" => AlphaMode::InverseFrequency,
                    _ => AlphaMode::Fixed(num(key, v)?),
                }
            }
            "child_tuning" => self.child_tuning.enabled = num(key, v)?,
            "keep_fraction" => self.child_tuning.keep_fraction = num(key, v)?,
            "fisher_batches" => self.child_tuning.fisher_batches = num(key, v)?,
            "sampler" => {
                self.sampler = match v {
                    "weighted" => SamplerKind::Weighted,
                    "uniform" => SamplerKind::Uniform,
                    _ => return Err(Error::Config(format!("sampler must be `weighted` or `uniform`, got `{v}`"))),
                }
            }
            "mask_fraction" => self.mask_fraction = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown training key `{key}`; valid keys: {}", KEYS.join(", ")))),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("base_lr", self.base_lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("dropout", self.dropout.to_string()),
            ("focal_gamma", self.focal_gamma.to_string()),
            (
                "focal_alpha",
                match self.focal_alpha {
                    AlphaMode::InverseFrequency => "inverse_frequency".to_string(),
                    AlphaMode::Fixed(a) => a.to_string(),
                },
            ),
            ("child_tuning", self.child_tuning.enabled.to_string()),
            ("keep_fraction", self.child_tuning.keep_fraction.to_string()),
            ("fisher_batches", self.child_tuning.fisher_batches.to_string()),
            (
                "sampler",
                match self.sampler {
                    SamplerKind::Weighted => "weighted",
                    SamplerKind::Uniform => "uniform",
                }
                .to_string(),
            ),
            ("mask_fraction", self.mask_fraction.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

const KEYS: [&str; 14] = [
    "batch_size",
    "epochs",
    "base_lr",
    "weight_decay",
    "warmup_steps",
    "dropout",
    "focal_gamma",
    "focal_alpha",
    "child_tuning",
    "keep_fraction",
    "fisher_batches",
    "sampler",
    "mask_fraction",
    "seed",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_keys() {
        let p = TrainPlan::pretrain();
        assert_eq!((p.batch_size, p.dropout, p.base_lr, p.weight_decay), (32, 0.1, 1e-4, 0.2));
        let f = TrainPlan::finetune();
        assert_eq!((f.batch_size, f.dropout, f.base_lr, f.weight_decay), (17, 0.5, 1e-3, 0.3));
        assert!(!f.child_tuning.enabled);
        let mut g = f.clone();
        for (k, v) in f.entries() {
            g.set(k, &v).unwrap();
        }
        assert_eq!(g, f);
        assert!(g.set("lr", "1").is_err());
        g.child_tuning.keep_fraction = 0.0;
        assert!(matches!(g.validate(), Err(Error::Config(_))));
    }
}

//! The run configuration file: flat `key = value` lines grouped under `[data]`,
//! `[model]`, `[pretrain]`, `[finetune]`, `[eval]` and `[explain]` headers. `#`
//! starts a comment line. Every key has a default, so any subset may be given.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::cohort::{Binning, SplitMode, StudyDesign, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{ExperimentConfig, LogregPlan, Variant};
use crate::explain::ExplainConfig;
use crate::model::ModelConfig;
use crate::train::TrainPlan;

pub const SECTIONS: [&str; 6] = ["data", "model", "pretrain", "finetune", "eval", "explain"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    ByYear,
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub synth: SynthConfig,
    pub binning: Binning,
    pub split: SplitKind,
    /// Inclusive year ranges for the by-year split.
    pub train_years: (i32, i32),
    pub test_years: (i32, i32),
    pub test_fraction: f64,
    pub val_fraction: f64,
    /// Seed for cohort generation and single-run splits.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synth: SynthConfig::default(),
            binning: Binning::default(),
            split: SplitKind::ByYear,
            train_years: (2008, 2016),
            test_years: (2017, 2019),
            test_fraction: 0.2,
            val_fraction: 0.15,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn split_mode(&self) -> SplitMode {
        match self.split {
            SplitKind::ByYear => SplitMode::ByYear {
                train_years: (self.train_years.0..=self.train_years.1).collect(),
                test_years: (self.test_years.0..=self.test_years.1).collect(),
            },
            SplitKind::Random => SplitMode::Random { test_fraction: self.test_fraction },
        }
    }

    /// Study design implied by the binning: the history window is exactly
    /// `p_max` frames.
    pub fn design(&self) -> StudyDesign {
        StudyDesign { t1_hours: self.binning.h_hours * self.binning.p_max as f64, ..self.synth.design }
    }

    /// Generator settings with the design matched to the binning.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { design: self.design(), ..self.synth.clone() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub base_seed: u64,
    pub n_runs: usize,
    pub variants: Vec<Variant>,
    pub logreg: LogregPlan,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { base_seed: 0, n_runs: 10, variants: vec![Variant::full()], logreg: LogregPlan::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub data: DataConfig,
    /// `k`, `m` and `p_max` are filled in from the data.
    pub model: ModelConfig,
    pub pretrain: TrainPlan,
    pub finetune: TrainPlan,
    pub eval: EvalConfig,
    pub explain: ExplainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainPlan::pretrain(),
            finetune: TrainPlan::finetune(),
            eval: EvalConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

const DATA_KEYS: [&str; 29] = [
    "n_stays",
    "k",
    "m",
    "variants_per_code",
    "prevalence",
    "signal_strength",
    "drift_weight",
    "interaction_weight",
    "drift_features",
    "interaction_pair",
    "drift_scale",
    "drift_window_hours",
    "noise",
    "mean_interval_hours",
    "code_rate_per_day",
    "outlier_rate",
    "years",
    "min_index_hours",
    "max_index_hours",
    "post_index_hours",
    "blackout_hours",
    "h_hours",
    "p_max",
    "split_mode",
    "train_years",
    "test_years",
    "test_fraction",
    "val_fraction",
    "seed",
];

const MODEL_KEYS: [&str; 8] =
    ["d_model", "n_layers", "n_heads", "d_ff", "dropout", "embedder", "gct_layers", "gct_kl_weight"];
const EVAL_KEYS: [&str; 6] = ["base_seed", "n_runs", "variants", "logreg_steps", "logreg_lr", "logreg_l2"];
const EXPLAIN_KEYS: [&str; 4] = ["n_stays", "n_baselines", "n_samples", "seed"];

fn num<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim().parse().map_err(|_| Error::Config(format!("invalid value `{v}` for {key}")))
}

fn list<V: FromStr>(key: &str, v: &str) -> Result<Vec<V>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s)).collect()
}

fn pair<V: FromStr + Copy>(key: &str, v: &str, sep: char) -> Result<(V, V)> {
    let (a, b) = v.split_once(sep).ok_or_else(|| Error::Config(format!("{key} expects `a{sep}b`, got `{v}`")))?;
    Ok((num(key, a)?, num(key, b)?))
}

fn unknown(section: &str, key: &str, valid: &[&str]) -> Error {
    Error::Config(format!("unknown key `{key}` in [{section}]; valid keys: {}", valid.join(", ")))
}

impl Config {
    pub fn valid_keys(section: &str) -> Result<&'static [&'static str]> {
        Ok(match section {
            "data" => &DATA_KEYS,
            "model" => &MODEL_KEYS,
            "pretrain" | "finetune" => TrainPlan::keys(),
            "eval" => &EVAL_KEYS,
            "explain" => &EXPLAIN_KEYS,
            _ => return Err(Error::Config(format!("unknown section `{section}`; valid sections: {}", SECTIONS.join(", ")))),
        })
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let valid = Config::valid_keys(section)?;
        if !valid.contains(&key) {
            return Err(unknown(section, key, valid));
        }
        let v = value.trim();
        match section {
            "data" => self.set_data(key, v),
            "model" => self.model.set(key, v),
            "pretrain" => self.pretrain.set(key, v),
            "finetune" => self.finetune.set(key, v),
            "eval" => {
                let e = &mut self.eval;
                match key {
                    "base_seed" => e.base_seed = num(key, v)?,
                    "n_runs" => e.n_runs = num(key, v)?,
                    "variants" => e.variants = list(key, v)?,
                    "logreg_steps" => e.logreg.steps = num(key, v)?,
                    "logreg_lr" => e.logreg.lr = num(key, v)?,
                    _ => e.logreg.l2 = num(key, v)?,
                }
                Ok(())
            }
            _ => {
                let x = &mut self.explain;
                match key {
                    "n_stays" => x.n_stays = num(key, v)?,
                    "n_baselines" => x.n_baselines = num(key, v)?,
                    "n_samples" => x.n_samples = num(key, v)?,
                    _ => x.seed = num(key, v)?,
                }
                Ok(())
            }
        }
    }

    fn set_data(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.data;
        let s = &mut d.synth;
        match key {
            "n_stays" => s.n_stays = num(key, v)?,
            "k" => s.k = num(key, v)?,
            "m" => s.m = num(key, v)?,
            "variants_per_code" => s.variants_per_code = num(key, v)?,
            "prevalence" => s.prevalence = num(key, v)?,
            "signal_strength" => s.signal_strength = num(key, v)?,
            "drift_weight" => s.drift_weight = num(key, v)?,
            "interaction_weight" => s.interaction_weight = num(key, v)?,
            "drift_features" => s.drift_features = list(key, v)?,
            "interaction_pair" => s.interaction_pair = pair(key, v, ',')?,
            "drift_scale" => s.drift_scale = num(key, v)?,
            "drift_window_hours" => s.drift_window_hours = num(key, v)?,
            "noise" => s.noise = num(key, v)?,
            "mean_interval_hours" => s.mean_interval_hours = num(key, v)?,
            "code_rate_per_day" => s.code_rate_per_day = num(key, v)?,
            "outlier_rate" => s.outlier_rate = num(key, v)?,
            "years" => s.years = pair(key, v, '-')?,
            "min_index_hours" => s.min_index_hours = num(key, v)?,
            "max_index_hours" => s.max_index_hours = num(key, v)?,
            "post_index_hours" => s.post_index_hours = num(key, v)?,
            "blackout_hours" => s.design.t2_hours = num(key, v)?,
            "h_hours" => d.binning.h_hours = num(key, v)?,
            "p_max" => d.binning.p_max = num(key, v)?,
            "split_mode" => {
                d.split = match v {
                    "by_year" => SplitKind::ByYear,
                    "random" => SplitKind::Random,
                    _ => return Err(Error::Config(format!("split_mode must be `by_year` or `random`, got `{v}`"))),
                }
            }
            "train_years" => d.train_years = pair(key, v, '-')?,
            "test_years" => d.test_years = pair(key, v, '-')?,
            "test_fraction" => d.test_fraction = num(key, v)?,
            "val_fraction" => d.val_fraction = num(key, v)?,
            _ => d.seed = num(key, v)?,
        }
        Ok(())
    }

    /// Applies one `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) =
            spec.split_once('=').ok_or_else(|| Error::Config(format!("override must look like section.key=value, got `{spec}`")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override must look like section.key=value, got `{spec}`")))?;
        self.set(section, key, value)
    }

    fn entries(&self, section: &str) -> Vec<(&'static str, String)> {
        match section {
            "data" => {
                let (d, s) = (&self.data, &self.data.synth);
                let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
                let years = |(a, b): (i32, i32)| format!("{a}-{b}");
                vec![
                    ("n_stays", s.n_stays.to_string()),
                    ("k", s.k.to_string()),
                    ("m", s.m.to_string()),
                    ("variants_per_code", s.variants_per_code.to_string()),
                    ("prevalence", s.prevalence.to_string()),
                    ("signal_strength", s.signal_strength.to_string()),
                    ("drift_weight", s.drift_weight.to_string()),
                    ("interaction_weight", s.interaction_weight.to_string()),
                    ("drift_features", join(&s.drift_features)),
                    ("interaction_pair", format!("{},{}", s.interaction_pair.0, s.interaction_pair.1)),
                    ("drift_scale", s.drift_scale.to_string()),
                    ("drift_window_hours", s.drift_window_hours.to_string()),
                    ("noise", s.noise.to_string()),
                    ("mean_interval_hours", s.mean_interval_hours.to_string()),
                    ("code_rate_per_day", s.code_rate_per_day.to_string()),
                    ("outlier_rate", s.outlier_rate.to_string()),
                    ("years", years(s.years)),
                    ("min_index_hours", s.min_index_hours.to_string()),
                    ("max_index_hours", s.max_index_hours.to_string()),
                    ("post_index_hours", s.post_index_hours.to_string()),
                    ("blackout_hours", s.design.t2_hours.to_string()),
                    ("h_hours", d.binning.h_hours.to_string()),
                    ("p_max", d.binning.p_max.to_string()),
                    ("split_mode", if d.split == SplitKind::ByYear { "by_year" } else { "random" }.to_string()),
                    ("train_years", years(d.train_years)),
                    ("test_years", years(d.test_years)),
                    ("test_fraction", d.test_fraction.to_string()),
                    ("val_fraction", d.val_fraction.to_string()),
                    ("seed", d.seed.to_string()),
                ]
            }
            "model" => self.model.entries().into_iter().filter(|(k, _)| MODEL_KEYS.contains(k)).collect(),
            "pretrain" => self.pretrain.entries(),
            "finetune" => self.finetune.entries(),
            "eval" => {
                let e = &self.eval;
                vec![
                    ("base_seed", e.base_seed.to_string()),
                    ("n_runs", e.n_runs.to_string()),
                    ("variants", e.variants.iter().map(Variant::to_string).collect::<Vec<_>>().join(",")),
                    ("logreg_steps", e.logreg.steps.to_string()),
                    ("logreg_lr", e.logreg.lr.to_string()),
                    ("logreg_l2", e.logreg.l2.to_string()),
                ]
            }
            _ => {
                let x = &self.explain;
                vec![
                    ("n_stays", x.n_stays.to_string()),
                    ("n_baselines", x.n_baselines.to_string()),
                    ("n_samples", x.n_samples.to_string()),
                    ("seed", x.seed.to_string()),
                ]
            }
        }
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, section) in SECTIONS.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            for (k, v) in self.entries(section) {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    /// Applies `text` on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: i + 1, message };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                Config::valid_keys(name)?;
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            let s = section.as_deref().ok_or_else(|| parse_err("key before any [section] header".into()))?;
            self.set(s, k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synth.validate()?;
        if !(self.data.binning.h_hours > 0.0) || self.data.binning.p_max == 0 {
            return Err(Error::Config("h_hours and p_max must be positive".into()));
        }
        // Column counts come from the data; any positive stand-in checks the rest.
        ModelConfig { k: 1, m: 0, ..self.model.clone() }.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.eval.n_runs == 0 || self.eval.variants.is_empty() {
            return Err(Error::Config("eval needs at least one run and one variant".into()));
        }
        if self.explain.n_samples == 0 || self.explain.n_baselines == 0 {
            return Err(Error::Config("explain needs n_samples and n_baselines of at least 1".into()));
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            base_seed: self.eval.base_seed,
            n_runs: self.eval.n_runs,
            split_mode: self.data.split_mode(),
            val_fraction: self.data.val_fraction,
            model: self.model.clone(),
            pretrain: self.pretrain.clone(),
            finetune: self.finetune.clone(),
            logreg: self.eval.logreg.clone(),
            variants: self.eval.variants.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = Config::default();
        cfg.apply_override("data.drift_features=0,3").unwrap();
        cfg.apply_override("finetune.focal_alpha=0.25").unwrap();
        cfg.apply_override("eval.variants=full,no_gct+no_tl").unwrap();
        cfg.apply_override("data.split_mode=random").unwrap();
        assert_eq!(Config::from_text(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(Config::from_text("").unwrap(), Config::default());
    }

    #[test]
    fn unknown_keys_list_the_valid_ones() {
        let err = Config::from_text("[model]\nwidth = 3\n").unwrap_err().to_string();
        assert!(err.contains("width") && err.contains("d_model") && err.contains("gct_layers"), "{err}");
        assert!(Config::from_text("[optimizer]\n").is_err());
        assert!(Config::from_text("d_model = 3\n").is_err());
        assert!(Config::default().apply_override("model.k=3").is_err());
    }

    #[test]
    fn later_values_win() {
        let mut cfg = Config::from_text("# comment\n[finetune]\nepochs = 7\n[finetune]\nepochs = 9\n").unwrap();
        assert_eq!(cfg.finetune.epochs, 9);
        cfg.apply_override("finetune.epochs=3").unwrap();
        assert_eq!(cfg.finetune.epochs, 3);
        assert_eq!(cfg.pretrain.epochs, TrainPlan::pretrain().epochs);
    }
}

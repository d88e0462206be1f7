use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedderKind {
    /// One affine map of the whole row.
    Linear,
    /// Self-attention over the row's feature nodes.
    Gct,
}

impl FromStr for EmbedderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(EmbedderKind::Linear),
            "gct" => Ok(EmbedderKind::Gct),
            _ => Err(Error::Config(format!("embedder must be `linear` or `gct`, got `{s}`"))),
        }
    }
}

impl fmt::Display for EmbedderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedderKind::Linear => "linear",
            EmbedderKind::Gct => "gct",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Encoder layers, `K`.
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub p_max: usize,
    /// Numerical columns.
    pub k: usize,
    /// Categorical columns.
    pub m: usize,
    pub embedder: EmbedderKind,
    pub gct_layers: usize,
    /// Weight of the consecutive-layer attention KL penalty; 0 disables it.
    pub gct_kl_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            dropout: 0.1,
            p_max: 30,
            k: 0,
            m: 0,
            embedder: EmbedderKind::Gct,
            gct_layers: 2,
            gct_kl_weight: 0.01,
        }
    }
}

const KEYS: [&str; 11] =
    ["d_model", "n_layers", "n_heads", "d_ff", "dropout", "p_max", "k", "m", "embedder", "gct_layers", "gct_kl_weight"];

impl ModelConfig {
    pub fn l(&self) -> usize {
        self.k + self.m
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model={} must be a positive multiple of n_heads={}", self.d_model, self.n_heads));
        }
        if self.d_model % 2 != 0 {
            return bad(format!("d_model must be even for the positional encoding, got {}", self.d_model));
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.p_max == 0 {
            return bad("n_layers, d_ff and p_max must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.l() == 0 {
            return bad("the schema has no columns".into());
        }
        if !(self.gct_kl_weight >= 0.0) {
            return bad(format!("gct_kl_weight must be non-negative, got {}", self.gct_kl_weight));
        }
        Ok(())
    }

    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: FromStr>(key: &str, v: &str) -> Result<V> {
            v.trim().parse().map_err(|_| Error::Config(format!("invalid value `{v}` for {key}")))
        }
        match key {
            "d_model" => self.d_model = num(key, value)?,
            "n_layers" => self.n_layers = num(key, value)?,
            "n_heads" => self.n_heads = num(key, value)?,
            "d_ff" => self.d_ff = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "p_max" => self.p_max = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "m" => self.m = num(key, value)?,
            "embedder" => self.embedder = value.trim().parse()?,
            "gct_layers" => self.gct_layers = num(key, value)?,
            "gct_kl_weight" => self.gct_kl_weight = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown model key `{key}`; valid keys: {}", KEYS.join(", ")))),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_model", self.d_model.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("dropout", self.dropout.to_string()),
            ("p_max", self.p_max.to_string()),
            ("k", self.k.to_string()),
            ("m", self.m.to_string()),
            ("embedder", self.embedder.to_string()),
            ("gct_layers", self.gct_layers.to_string()),
            ("gct_kl_weight", self.gct_kl_weight.to_string()),
        ]
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, message: format!("expected `key = value`, got `{line}`") })?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_validation() {
        let cfg = ModelConfig { k: 3, m: 2, embedder: EmbedderKind::Linear, ..ModelConfig::default() };
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert!(ModelConfig { d_model: 30, n_heads: 4, k: 1, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { dropout: 1.0, k: 1, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig::default().set("width", "3").is_err());
    }
}

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Optimisation settings shared by every training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_queries: usize,
    pub m_negatives: usize,
    pub top_n: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults sized for the small substituted models.
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 5,
            batch_queries: 16,
            m_negatives: 8,
            top_n: 50,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            warmup_fraction: 0.1,
            weight_decay: 0.0,
        }
    }
}

pub const KEYS: [&str; 11] = [
    "learning_rate",
    "epochs",
    "batch_queries",
    "m_negatives",
    "top_n",
    "seed",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "warmup_fraction",
    "weight_decay",
];

impl TrainConfig {
    /// The hyperparameters used for transformer-scale ranker training.
    pub fn paper_profile() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 2,
            batch_queries: 12,
            m_negatives: 40,
            top_n: 200,
            warmup_fraction: 0.1,
            weight_decay: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be > 0");
        }
        if self.batch_queries == 0 || self.m_negatives == 0 || self.top_n == 0 {
            return bad("batch_queries, m_negatives and top_n must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps < 0.0 {
            return bad("adam_eps must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1]");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be >= 0");
        }
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_queries" => self.batch_queries = parse(key, value)?,
            "m_negatives" => self.m_negatives = parse(key, value)?,
            "top_n" => self.top_n = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "warmup_fraction" => self.warmup_fraction = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown training key `{other}`"
                )))
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "learning_rate" => self.learning_rate.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_queries" => self.batch_queries.to_string(),
            "m_negatives" => self.m_negatives.to_string(),
            "top_n" => self.top_n.to_string(),
            "seed" => self.seed.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "warmup_fraction" => self.warmup_fraction.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            _ => return None,
        })
    }

    /// Flat `key=value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("known key"));
        }
        out
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::malformed(i + 1, "expected `key=value`"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

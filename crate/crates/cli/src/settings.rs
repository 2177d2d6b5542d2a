//! Layered configuration: defaults < config file < environment < flags.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use jointneg::corpus::SynthConfig;
use jointneg::lab::{self, parse_generator_set, LabConfig, SYNTH_KEYS};
use jointneg::training::parse_kv;

pub const ENV_PREFIX: &str = "JOINTNEG_";

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub lab: LabConfig,
    pub synth: SynthConfig,
    /// Leading synthetic queries that go to the training split.
    pub n_train: usize,
    pub generator_sets: Vec<Vec<String>>,
    pub distill_student: String,
    /// Whether `synth.seed` was given; otherwise it follows `seed`.
    synth_seed_set: bool,
}

impl Default for Settings {
    fn default() -> Self {
        let (solo, joint) = lab::baseline_sets();
        Self {
            lab: lab::reference_config(),
            synth: lab::reference_synth(0),
            n_train: lab::REFERENCE_TRAIN_QUERIES,
            generator_sets: vec![solo, joint],
            distill_student: lab::DISTILL_STUDENT.to_string(),
            synth_seed_set: false,
        }
    }
}

fn format_sets(sets: &[Vec<String>]) -> String {
    sets.iter()
        .map(|s| s.join(","))
        .collect::<Vec<_>>()
        .join(";")
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> jointneg::Result<()> {
        if let Some(k) = key.strip_prefix("synth.") {
            if k == "seed" {
                self.synth_seed_set = true;
            }
            return lab::set_synth_key(&mut self.synth, k, value);
        }
        match key {
            "n_train" => {
                self.n_train = value.trim().parse().map_err(|_| {
                    jointneg::Error::InvalidArgument(format!("bad value `{value}` for `n_train`"))
                })?
            }
            "generator_sets" => {
                self.generator_sets = value
                    .split(';')
                    .filter(|s| !s.trim().is_empty())
                    .map(parse_generator_set)
                    .collect::<jointneg::Result<_>>()?;
            }
            "distill_student" => {
                lab::retriever_spec(value.trim())?;
                self.distill_student = value.trim().to_string();
            }
            _ => self.lab.set(key, value)?,
        }
        Ok(())
    }

    /// Every recognised key.
    pub fn keys() -> Vec<String> {
        let mut keys: Vec<String> = Settings::default().to_kv().into_keys().collect();
        keys.sort();
        keys
    }

    /// Snapshot of every key, sorted.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut out = self.lab.to_kv();
        for k in SYNTH_KEYS {
            out.insert(
                format!("synth.{k}"),
                lab::synth_key_value(&self.synth, k).unwrap_or_default(),
            );
        }
        out.insert("n_train".into(), self.n_train.to_string());
        out.insert("generator_sets".into(), format_sets(&self.generator_sets));
        out.insert("distill_student".into(), self.distill_student.clone());
        out
    }

    pub fn to_text(&self) -> String {
        self.to_kv()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    fn finish(&mut self) {
        if !self.synth_seed_set {
            self.synth.seed = self.lab.seed;
        }
    }

    /// Builds settings from every layer. `env` looks up an environment
    /// variable; `flags` are `key=value` pairs from the command line.
    pub fn layered(
        config_file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        flags: &[(String, String)],
    ) -> anyhow::Result<Self> {
        let mut s = Settings::default();
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            let pairs = parse_kv(&text).with_context(|| format!("in {}", path.display()))?;
            for (k, v) in pairs {
                s.set(&k, &v)
                    .with_context(|| format!("in {}", path.display()))?;
            }
        }
        for key in Settings::keys() {
            if let Some(v) = env(&env_name(&key)) {
                s.set(&key, &v)
                    .with_context(|| format!("in ${}", env_name(&key)))?;
            }
        }
        for (k, v) in flags {
            s.set(k, v)?;
        }
        s.finish();
        Ok(s)
    }
}

/// `ranker.learning_rate` → `JOINTNEG_RANKER_LEARNING_RATE`.
pub fn env_name(key: &str) -> String {
    let mut name = String::from(ENV_PREFIX);
    name.extend(key.chars().map(|c| match c {
        '.' => '_',
        c => c.to_ascii_uppercase(),
    }));
    name
}

/// Splits `key=value`.
pub fn parse_flag(text: &str) -> anyhow::Result<(String, String)> {
    match text.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => bail!("expected `key=value`, got `{text}`"),
    }
}

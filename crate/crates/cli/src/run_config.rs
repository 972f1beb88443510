use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use infini::config::parse_kv;
use infini::numerics::container::{Container, FieldValue};
use infini::tasks::{Placement, RecallConfig};
use infini::training::TrainConfig;
use infini::ModelConfig;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "INFINI_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Synthetic needle recall.
    Recall,
    /// Next-token prediction on windows of a plain token file.
    Text,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Recall => "recall",
            Task::Text => "text",
        })
    }
}

/// Everything one run needs: architecture, optimization, task and paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: Task,
    /// Filler tokens between needle payload and query cue.
    pub recall_distance: usize,
    pub recall_payload_len: usize,
    pub recall_payload_vocab: usize,
    /// Every other training sequence puts the needle at most this far from
    /// the query; `None` trains on the configured distance only.
    pub recall_near_max: Option<usize>,
    /// Distinct payloads held out of training and scored at the end.
    pub recall_eval_payloads: usize,
    /// Instances per held-out payload.
    pub recall_eval_repeats: usize,
    pub checkpoint_dir: PathBuf,
    pub data_dir: PathBuf,
    /// Token file for the text task, relative to `data_dir`.
    pub train_file: String,
    pub metrics_file: PathBuf,
    /// Write a checkpoint every this many steps; 0 keeps only the last.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::desk(),
            task: Task::Recall,
            recall_distance: 160,
            recall_payload_len: 2,
            recall_payload_vocab: 16,
            recall_near_max: Some(50),
            recall_eval_payloads: 16,
            recall_eval_repeats: 4,
            checkpoint_dir: PathBuf::from("checkpoints"),
            data_dir: PathBuf::from("."),
            train_file: "train.tok".into(),
            metrics_file: PathBuf::from("metrics.csv"),
            checkpoint_every: 0,
            log_every: 50,
            precision: Precision::F32,
        }
    }
}

const RUN_KEYS: [&str; 14] = [
    "task",
    "recall_distance",
    "recall_payload_len",
    "recall_payload_vocab",
    "recall_near_max",
    "recall_eval_payloads",
    "recall_eval_repeats",
    "checkpoint_dir",
    "data_dir",
    "train_file",
    "metrics_file",
    "checkpoint_every",
    "log_every",
    "precision",
];

fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("{key}: cannot parse `{value}`"))
}

impl RunConfig {
    /// Every accepted key.
    pub fn keys() -> Vec<&'static str> {
        ModelConfig::KEYS
            .iter()
            .chain(TrainConfig::KEYS.iter())
            .chain(RUN_KEYS.iter())
            .copied()
            .collect()
    }

    fn set_run(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key {
            "task" => {
                self.task = match v {
                    "recall" => Task::Recall,
                    "text" => Task::Text,
                    other => bail!("task: expected `recall` or `text`, got `{other}`"),
                }
            }
            "recall_distance" => self.recall_distance = num(key, v)?,
            "recall_payload_len" => self.recall_payload_len = num(key, v)?,
            "recall_payload_vocab" => self.recall_payload_vocab = num(key, v)?,
            "recall_near_max" => {
                self.recall_near_max = if v == "none" { None } else { Some(num(key, v)?) }
            }
            "recall_eval_payloads" => self.recall_eval_payloads = num(key, v)?,
            "recall_eval_repeats" => self.recall_eval_repeats = num(key, v)?,
            "checkpoint_dir" => self.checkpoint_dir = PathBuf::from(v),
            "data_dir" => self.data_dir = PathBuf::from(v),
            "train_file" => self.train_file = v.to_string(),
            "metrics_file" => self.metrics_file = PathBuf::from(v),
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "log_every" => self.log_every = num(key, v)?,
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    other => bail!("precision: expected `f32` or `f64`, got `{other}`"),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn get_run(&self, key: &str) -> Option<String> {
        Some(match key {
            "task" => self.task.to_string(),
            "recall_distance" => self.recall_distance.to_string(),
            "recall_payload_len" => self.recall_payload_len.to_string(),
            "recall_payload_vocab" => self.recall_payload_vocab.to_string(),
            "recall_near_max" => self
                .recall_near_max
                .map_or_else(|| "none".to_string(), |d| d.to_string()),
            "recall_eval_payloads" => self.recall_eval_payloads.to_string(),
            "recall_eval_repeats" => self.recall_eval_repeats.to_string(),
            "checkpoint_dir" => self.checkpoint_dir.display().to_string(),
            "data_dir" => self.data_dir.display().to_string(),
            "train_file" => self.train_file.clone(),
            "metrics_file" => self.metrics_file.display().to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "log_every" => self.log_every.to_string(),
            "precision" => self.precision.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` pairs in order, rejecting unknown keys.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, _) in pairs {
            if !Self::keys().contains(&k.as_str()) {
                bail!("unknown config key `{k}`");
            }
        }
        let rest = self.model.apply(pairs)?;
        for (k, v) in rest {
            if !self.train.set(&k, &v)? && !self.set_run(&k, &v)? {
                bail!("unknown config key `{k}`");
            }
        }
        Ok(())
    }

    /// Defaults, then the config file (explicit path, else `$INFINI_CONFIG`),
    /// then command-line overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            pairs = parse_kv(&text).with_context(|| format!("in config {}", path.display()))?;
        }
        pairs.extend_from_slice(overrides);
        let mut cfg = Self::default();
        cfg.apply(&pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn recall(&self) -> RecallConfig {
        RecallConfig {
            vocab_size: self.model.vocab_size,
            seq_len: self.train.seq_len,
            payload_len: self.recall_payload_len,
            payload_vocab: self.recall_payload_vocab,
            placement: Placement::Distance(self.recall_distance),
        }
    }

    pub fn train_path(&self) -> PathBuf {
        self.data_dir.join(&self.train_file)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(&self.model)?;
        if self.task == Task::Recall {
            self.recall().validate()?;
            if let Some(d) = self.recall_near_max {
                RecallConfig {
                    placement: Placement::Distance(d),
                    ..self.recall()
                }
                .validate()
                .context("recall_near_max")?;
            }
            if self.recall_eval_payloads as u128 * 2 > self.recall().payload_space() {
                bail!(
                    "recall_eval_payloads: {} exceeds half of the {} possible payloads",
                    self.recall_eval_payloads,
                    self.recall().payload_space()
                );
            }
        }
        if self.log_every == 0 {
            bail!("log_every must be positive");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let run: String = RUN_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get_run(k).expect("known key")))
            .collect();
        format!("{}{}{run}", self.model.to_kv(), self.train.to_kv())
    }

    /// Records the task and path settings in a checkpoint.
    pub fn write_to(&self, c: &mut Container) {
        for k in RUN_KEYS {
            c.set_field(&format!("run.{k}"), FieldValue::Text(self.get_run(k).expect("known key")));
        }
    }

    /// Rebuilds the settings stored by [`RunConfig::write_to`]; the model
    /// and optimization parts come from the checkpoint's own fields.
    pub fn read_from(c: &Container, model: ModelConfig, train: TrainConfig) -> Result<Self> {
        let mut cfg = Self {
            model,
            train,
            ..Self::default()
        };
        for k in RUN_KEYS {
            if let Some(v) = c.field(&format!("run.{k}")) {
                cfg.set_run(k, &v.render())?;
            }
        }
        Ok(cfg)
    }
}

/// Parses `--key=value` / `--key value` words; dashes in keys become
/// underscores.
pub fn parse_overrides(words: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = words.iter();
    while let Some(w) = it.next() {
        let Some(body) = w.strip_prefix("--") else {
            bail!("unexpected argument `{w}`; overrides take the form --key=value");
        };
        let (k, v) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .with_context(|| format!("override --{body} needs a value"))?;
                (body.to_string(), v.clone())
            }
        };
        out.push((k.replace('-', "_"), v));
    }
    Ok(out)
}

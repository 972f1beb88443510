use std::f64::consts::PI;
use std::str::FromStr;

use crate::config::{parse_bool, ModelConfig};
use crate::error::{InfiniError, Result};
use crate::numerics::container::{Container, FieldValue};
use crate::par::Execution;

/// Optimization and unroll settings for segment-recurrent training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    /// Training sequence length `T`; must be a multiple of the segment length.
    pub seq_len: usize,
    /// Global-norm clip threshold; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Recompute segment activations during the backward pass.
    pub checkpointing: bool,
    /// Keep every gate logit fixed at its current value.
    pub freeze_gates: bool,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Small-scale recipe used for the synthetic recall runs.
    pub fn desk() -> Self {
        Self {
            peak_lr: 3e-3,
            warmup_steps: 200,
            total_steps: 5000,
            batch_size: 16,
            seq_len: 256,
            grad_clip_norm: Some(1.0),
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            checkpointing: true,
            freeze_gates: false,
            execution: Execution::Parallel,
        }
    }

    /// Long-context reference recipe: lr 0.01, 1000 warmup steps, batch 64,
    /// 16 segments of 2048 tokens.
    pub fn long_context() -> Self {
        Self {
            peak_lr: 0.01,
            warmup_steps: 1000,
            total_steps: 10_000,
            batch_size: 64,
            seq_len: 32_768,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "long-context" => Ok(Self::long_context()),
            other => Err(InfiniError::Config(format!(
                "unknown preset `{other}`; expected `desk` or `long-context`"
            ))),
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.total_steps == 0 {
            return Err(InfiniError::Config("total_steps must be positive".into()));
        }
        if self.warmup_steps > self.total_steps {
            return Err(InfiniError::Config(format!(
                "warmup_steps ({}) exceeds total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(InfiniError::Config("batch_size must be positive".into()));
        }
        if self.seq_len < 2 || !self.seq_len.is_multiple_of(model.segment_len) {
            return Err(InfiniError::Config(format!(
                "seq_len ({}) must be a multiple of segment_len ({}) and at least 2",
                self.seq_len, model.segment_len
            )));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(InfiniError::Config(format!("peak_lr must be >= 0, got {}", self.peak_lr)));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(InfiniError::Config(format!("grad_clip_norm must be > 0, got {c}")));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(InfiniError::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(InfiniError::Config("adam_eps must be positive".into()));
        }
        Ok(())
    }

    /// Segments unrolled per training sequence.
    pub fn unroll(&self, model: &ModelConfig) -> usize {
        self.seq_len / model.segment_len
    }

    pub const KEYS: [&'static str; 13] = [
        "peak_lr",
        "warmup_steps",
        "total_steps",
        "batch_size",
        "seq_len",
        "grad_clip_norm",
        "seed",
        "beta1",
        "beta2",
        "adam_eps",
        "checkpointing",
        "freeze_gates",
        "parallel",
    ];

    /// Sets one field from text; `Ok(false)` for keys this type does not own.
    /// `grad_clip_norm = 0` or `none` disables clipping.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key {
            "peak_lr" => self.peak_lr = num(key, v)?,
            "warmup_steps" => self.warmup_steps = num(key, v)?,
            "total_steps" => self.total_steps = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "seq_len" => self.seq_len = num(key, v)?,
            "grad_clip_norm" => {
                self.grad_clip_norm = if v.eq_ignore_ascii_case("none") {
                    None
                } else {
                    let c: f64 = num(key, v)?;
                    (c != 0.0).then_some(c)
                }
            }
            "seed" => self.seed = num(key, v)?,
            "beta1" => self.beta1 = num(key, v)?,
            "beta2" => self.beta2 = num(key, v)?,
            "adam_eps" => self.adam_eps = num(key, v)?,
            "checkpointing" => self.checkpointing = parse_bool(key, v)?,
            "freeze_gates" => self.freeze_gates = parse_bool(key, v)?,
            "parallel" => {
                self.execution = if parse_bool(key, v)? {
                    Execution::Parallel
                } else {
                    Execution::Sequential
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "peak_lr" => self.peak_lr.to_string(),
            "warmup_steps" => self.warmup_steps.to_string(),
            "total_steps" => self.total_steps.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seq_len" => self.seq_len.to_string(),
            "grad_clip_norm" => self
                .grad_clip_norm
                .map_or_else(|| "none".to_string(), |c| c.to_string()),
            "seed" => self.seed.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "checkpointing" => self.checkpointing.to_string(),
            "freeze_gates" => self.freeze_gates.to_string(),
            "parallel" => (self.execution == Execution::Parallel).to_string(),
            _ => return None,
        })
    }

    pub fn to_kv(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    pub fn fields(&self) -> Vec<(String, FieldValue)> {
        Self::KEYS
            .iter()
            .map(|&k| (format!("train.{k}"), FieldValue::Text(self.get(k).expect("known key"))))
            .collect()
    }

    pub fn from_fields(c: &Container) -> Result<Self> {
        let mut cfg = Self::desk();
        for k in Self::KEYS {
            let v = c
                .field(&format!("train.{k}"))
                .ok_or_else(|| InfiniError::Config(format!("checkpoint lacks `train.{k}`")))?;
            cfg.set(k, &v.render())?;
        }
        Ok(cfg)
    }
}

fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| InfiniError::Config(format!("{key}: cannot parse `{value}`")))
}

/// Linear warmup to `peak_lr`, then cosine decay to 0 at `total_steps`.
/// Steps past the end stay at 0.
pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    let step = step.min(cfg.total_steps);
    if step < cfg.warmup_steps {
        return cfg.peak_lr * step as f64 / cfg.warmup_steps as f64;
    }
    let span = cfg.total_steps - cfg.warmup_steps;
    if span == 0 {
        return cfg.peak_lr;
    }
    let progress = (step - cfg.warmup_steps) as f64 / span as f64;
    cfg.peak_lr * 0.5 * (1.0 + (PI * progress).cos())
}

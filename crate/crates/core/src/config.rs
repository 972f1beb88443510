use std::fmt;
use std::str::FromStr;

use crate::error::{InfiniError, Result};
use crate::numerics::container::{Container, FieldValue};

/// Compressive-memory write rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateRule {
    /// `M += σ(K)ᵀV`
    #[default]
    Linear,
    /// `M += σ(K)ᵀ(V − retrieve(K))`
    LinearDelta,
}

impl fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateRule::Linear => "linear",
            UpdateRule::LinearDelta => "delta",
        })
    }
}

impl FromStr for UpdateRule {
    type Err = InfiniError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(UpdateRule::Linear),
            "delta" | "linear+delta" | "linear_delta" | "lineardelta" => {
                Ok(UpdateRule::LinearDelta)
            }
            other => Err(InfiniError::Config(format!(
                "update_rule: expected `linear` or `delta`, got `{other}`"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_key: usize,
    pub d_value: usize,
    pub d_ff: usize,
    /// Segment length `N`.
    pub segment_len: usize,
    pub vocab_size: usize,
    pub update_rule: UpdateRule,
    /// Use `1/sqrt(d_model)` instead of `1/sqrt(d_key)` for local attention.
    pub scale_by_d_model: bool,
    pub tie_embeddings: bool,
}

/// Base of the rotary frequency ladder.
pub const ROPE_BASE: f64 = 10_000.0;
/// RMS normalization epsilon.
pub const NORM_EPS: f64 = 1e-6;
/// Floor for the memory-retrieval denominator.
pub const RETRIEVAL_EPS: f64 = 1e-8;

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_heads(2, 4, 128, 256, 64, 64)
    }
}

impl ModelConfig {
    /// Per-head `d_key = d_value = d_model / heads`.
    pub fn with_heads(
        layers: usize,
        heads: usize,
        d_model: usize,
        d_ff: usize,
        segment_len: usize,
        vocab_size: usize,
    ) -> Self {
        let d_head = d_model / heads.max(1);
        Self {
            layers,
            heads,
            d_model,
            d_key: d_head,
            d_value: d_head,
            d_ff,
            segment_len,
            vocab_size,
            update_rule: UpdateRule::Linear,
            scale_by_d_model: false,
            tie_embeddings: true,
        }
    }

    /// Reference configuration of the long-context language-modeling runs.
    pub fn long_context() -> Self {
        Self::with_heads(12, 8, 1024, 4096, 2048, 32_000)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_key", self.d_key),
            ("d_value", self.d_value),
            ("d_ff", self.d_ff),
            ("segment_len", self.segment_len),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(InfiniError::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_key.is_multiple_of(2) {
            return Err(InfiniError::Config(format!(
                "d_key must be even for the rotary transform, got {}",
                self.d_key
            )));
        }
        Ok(())
    }

    pub fn attention_scale(&self) -> f64 {
        let d = if self.scale_by_d_model {
            self.d_model
        } else {
            self.d_key
        };
        1.0 / (d as f64).sqrt()
    }

    /// Scalars held by one stream's compressive memory across all layers.
    pub fn memory_scalars(&self) -> usize {
        self.d_key * (self.d_value + 1) * self.heads * self.layers
    }
}

fn parse_num<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| InfiniError::Config(format!("{key}: cannot parse `{value}`")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(InfiniError::Config(format!("{key}: expected a boolean, got `{other}`"))),
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            InfiniError::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ModelConfig {
    pub const KEYS: [&'static str; 11] = [
        "layers",
        "heads",
        "d_model",
        "d_key",
        "d_value",
        "d_ff",
        "segment_len",
        "vocab_size",
        "update_rule",
        "scale_by_d_model",
        "tie_embeddings",
    ];

    /// Sets one field from text. Returns `Ok(false)` for keys this type
    /// does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "layers" => self.layers = parse_num(key, value)?,
            "heads" => self.heads = parse_num(key, value)?,
            "d_model" => self.d_model = parse_num(key, value)?,
            "d_key" => self.d_key = parse_num(key, value)?,
            "d_value" => self.d_value = parse_num(key, value)?,
            "d_ff" => self.d_ff = parse_num(key, value)?,
            "segment_len" => self.segment_len = parse_num(key, value)?,
            "vocab_size" => self.vocab_size = parse_num(key, value)?,
            "update_rule" => self.update_rule = value.trim().parse()?,
            "scale_by_d_model" => self.scale_by_d_model = parse_bool(key, value)?,
            "tie_embeddings" => self.tie_embeddings = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "layers" => self.layers.to_string(),
            "heads" => self.heads.to_string(),
            "d_model" => self.d_model.to_string(),
            "d_key" => self.d_key.to_string(),
            "d_value" => self.d_value.to_string(),
            "d_ff" => self.d_ff.to_string(),
            "segment_len" => self.segment_len.to_string(),
            "vocab_size" => self.vocab_size.to_string(),
            "update_rule" => self.update_rule.to_string(),
            "scale_by_d_model" => self.scale_by_d_model.to_string(),
            "tie_embeddings" => self.tie_embeddings.to_string(),
            _ => return None,
        })
    }

    /// Applies pairs in order; `d_key`/`d_value` default to `d_model / heads`
    /// unless given. Returns the pairs whose keys are not model keys.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<Vec<(String, String)>> {
        let mut rest = Vec::new();
        for (k, v) in pairs {
            if !self.set(k, v)? {
                rest.push((k.clone(), v.clone()));
            }
        }
        let given = |key: &str| pairs.iter().any(|(k, _)| k == key);
        if let Some(width) = self.d_model.checked_div(self.heads) {
            if !given("d_key") {
                self.d_key = width;
            }
            if !given("d_value") {
                self.d_value = width;
            }
        }
        Ok(rest)
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
            .map(|&k| {
                let v = match k {
                    "update_rule" => FieldValue::Text(self.update_rule.to_string()),
                    "scale_by_d_model" => FieldValue::Int(self.scale_by_d_model as i64),
                    "tie_embeddings" => FieldValue::Int(self.tie_embeddings as i64),
                    _ => FieldValue::Int(self.get(k).expect("known key").parse().expect("integer")),
                };
                (format!("config.{k}"), v)
            })
            .collect()
    }

    pub fn from_fields(c: &Container) -> Result<Self> {
        let mut cfg = Self::default();
        for k in Self::KEYS {
            let v = c
                .field(&format!("config.{k}"))
                .ok_or_else(|| InfiniError::Config(format!("checkpoint lacks `{k}`")))?;
            cfg.set(k, &v.render())?;
        }
        Ok(cfg)
    }
}

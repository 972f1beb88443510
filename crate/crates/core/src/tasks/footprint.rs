//! Memory (cache) footprint and effective context length of segment-level
//! memory transformers, counted in stored scalars.

use std::fmt;
use std::str::FromStr;

use crate::config::ModelConfig;
use crate::error::{InfiniError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    TransformerXl,
    Compressive,
    Memorizing,
    Rmt,
    AutoCompressors,
    Infini,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::TransformerXl,
        Family::Compressive,
        Family::Memorizing,
        Family::Rmt,
        Family::AutoCompressors,
        Family::Infini,
    ];

    /// Parameters each family needs, memory and context formulas together.
    pub fn required(self) -> &'static [&'static str] {
        match self {
            Family::TransformerXl => &["d_key", "d_value", "heads", "segment_len", "layers"],
            Family::Compressive => &["d_model", "compressed", "segment_len", "layers", "ratio"],
            Family::Memorizing => &["d_key", "d_value", "heads", "segment_len", "segments"],
            Family::Rmt => &["d_model", "prompts", "layers", "segment_len", "segments"],
            Family::AutoCompressors => {
                &["d_model", "prompts", "steps", "layers", "segment_len", "segments"]
            }
            Family::Infini => &["d_key", "d_value", "heads", "layers", "segment_len", "segments"],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::TransformerXl => "transformer-xl",
            Family::Compressive => "compressive",
            Family::Memorizing => "memorizing",
            Family::Rmt => "rmt",
            Family::AutoCompressors => "autocompressors",
            Family::Infini => "infini",
        })
    }
}

impl FromStr for Family {
    type Err = InfiniError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "transformer-xl" | "xl" => Ok(Family::TransformerXl),
            "compressive" => Ok(Family::Compressive),
            "memorizing" => Ok(Family::Memorizing),
            "rmt" => Ok(Family::Rmt),
            "autocompressors" => Ok(Family::AutoCompressors),
            "infini" => Ok(Family::Infini),
            other => Err(InfiniError::Input(format!("unknown model family `{other}`"))),
        }
    }
}

/// Dimension and horizon parameters; only the chosen family's fields must be
/// set. `compressed` is `c`, `ratio` is `r`, `prompts` is `p`, `steps` is `m`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FootprintParams {
    pub segment_len: Option<u64>,
    pub segments: Option<u64>,
    pub layers: Option<u64>,
    pub heads: Option<u64>,
    pub d_key: Option<u64>,
    pub d_value: Option<u64>,
    pub d_model: Option<u64>,
    pub compressed: Option<u64>,
    pub ratio: Option<u64>,
    pub prompts: Option<u64>,
    pub steps: Option<u64>,
    /// Memorizing only: tokens held by the kNN memory of each memory layer.
    /// When set, those layers store `knn_tokens` keys and values while the
    /// remaining `layers - knn_layers` keep a local cache of `segment_len`.
    pub knn_tokens: Option<u64>,
    /// Memorizing only: layers carrying the kNN memory (default 1).
    pub knn_layers: Option<u64>,
}

impl FootprintParams {
    /// 12 layers, 8 heads of width 128, d_model 1024, segments of 2048.
    pub fn reference(segments: u64) -> Self {
        Self {
            segment_len: Some(2048),
            segments: Some(segments),
            layers: Some(12),
            heads: Some(8),
            d_key: Some(128),
            d_value: Some(128),
            d_model: Some(1024),
            ..Default::default()
        }
    }

    /// Dimensions of a live model, with a segment count.
    pub fn from_model(cfg: &ModelConfig, segments: u64) -> Self {
        Self {
            segment_len: Some(cfg.segment_len as u64),
            segments: Some(segments),
            layers: Some(cfg.layers as u64),
            heads: Some(cfg.heads as u64),
            d_key: Some(cfg.d_key as u64),
            d_value: Some(cfg.d_value as u64),
            d_model: Some(cfg.d_model as u64),
            ..Default::default()
        }
    }

    pub const KEYS: [&'static str; 13] = [
        "segment_len",
        "segments",
        "layers",
        "heads",
        "d_key",
        "d_value",
        "d_model",
        "compressed",
        "ratio",
        "prompts",
        "steps",
        "knn_tokens",
        "knn_layers",
    ];

    pub fn get(&self, key: &str) -> Option<u64> {
        match key {
            "segment_len" => self.segment_len,
            "segments" => self.segments,
            "layers" => self.layers,
            "heads" => self.heads,
            "d_key" => self.d_key,
            "d_value" => self.d_value,
            "d_model" => self.d_model,
            "compressed" => self.compressed,
            "ratio" => self.ratio,
            "prompts" => self.prompts,
            "steps" => self.steps,
            "knn_tokens" => self.knn_tokens,
            "knn_layers" => self.knn_layers,
            _ => None,
        }
    }

    pub fn set(&mut self, key: &str, value: u64) -> Result<()> {
        let slot = match key {
            "segment_len" => &mut self.segment_len,
            "segments" => &mut self.segments,
            "layers" => &mut self.layers,
            "heads" => &mut self.heads,
            "d_key" => &mut self.d_key,
            "d_value" => &mut self.d_value,
            "d_model" => &mut self.d_model,
            "compressed" => &mut self.compressed,
            "ratio" => &mut self.ratio,
            "prompts" => &mut self.prompts,
            "steps" => &mut self.steps,
            "knn_tokens" => &mut self.knn_tokens,
            "knn_layers" => &mut self.knn_layers,
            other => return Err(InfiniError::Input(format!("unknown footprint parameter `{other}`"))),
        };
        *slot = Some(value);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FootprintDescriptor {
    pub family: Family,
    pub params: FootprintParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub family: Family,
    /// Stored scalars.
    pub memory: u128,
    /// Tokens reachable by the memory.
    pub context: u128,
}

fn need(d: &FootprintDescriptor, key: &'static str) -> Result<u128> {
    d.params
        .get(key)
        .map(u128::from)
        .ok_or_else(|| InfiniError::MissingParameter {
            family: d.family.to_string(),
            field: key,
        })
}

pub fn memory_footprint(d: &FootprintDescriptor) -> Result<Footprint> {
    for key in d.family.required() {
        need(d, key)?;
    }
    let g = |k| need(d, k);
    let (memory, context) = match d.family {
        Family::TransformerXl => (
            (g("d_key")? + g("d_value")?) * g("heads")? * g("segment_len")? * g("layers")?,
            g("segment_len")? * g("layers")?,
        ),
        Family::Compressive => (
            g("d_model")? * (g("compressed")? + g("segment_len")?) * g("layers")?,
            (g("compressed")? * g("ratio")? + g("segment_len")?) * g("layers")?,
        ),
        Family::Memorizing => {
            let per_token = (g("d_key")? + g("d_value")?) * g("heads")?;
            let stored = match d.params.knn_tokens {
                None => g("segment_len")? * g("segments")?,
                Some(knn) => {
                    let layers = g("layers")?;
                    let knn_layers = u128::from(d.params.knn_layers.unwrap_or(1));
                    if knn_layers > layers {
                        return Err(InfiniError::Input(format!(
                            "knn_layers ({knn_layers}) exceeds layers ({layers})"
                        )));
                    }
                    u128::from(knn) * knn_layers + g("segment_len")? * (layers - knn_layers)
                }
            };
            (per_token * stored, g("segment_len")? * g("segments")?)
        }
        Family::Rmt => (
            g("d_model")? * g("prompts")? * g("layers")? * 2,
            g("segment_len")? * g("segments")?,
        ),
        Family::AutoCompressors => (
            g("d_model")? * g("prompts")? * (g("steps")? + 1) * g("layers")?,
            g("segment_len")? * g("segments")?,
        ),
        Family::Infini => (
            g("d_key")? * (g("d_value")? + 1) * g("heads")? * g("layers")?,
            g("segment_len")? * g("segments")?,
        ),
    };
    Ok(Footprint {
        family: d.family,
        memory,
        context,
    })
}

/// `round(competitor / infini)`.
pub fn compression_ratio(competitor: u128, infini: u128) -> Result<u128> {
    if infini == 0 {
        return Err(InfiniError::Input("infini footprint is zero".into()));
    }
    Ok((competitor * 2 + infini) / (2 * infini))
}

/// Short human form: `1.6M`, `50M`, `183K`.
pub fn human_count(n: u128) -> String {
    let (v, suffix) = if n >= 1_000_000_000 {
        (n as f64 / 1e9, "B")
    } else if n >= 1_000_000 {
        (n as f64 / 1e6, "M")
    } else if n >= 1_000 {
        (n as f64 / 1e3, "K")
    } else {
        return n.to_string();
    };
    if v >= 10.0 {
        format!("{v:.0}{suffix}")
    } else {
        format!("{v:.1}{suffix}")
    }
}

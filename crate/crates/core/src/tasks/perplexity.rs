use std::fmt;
use std::str::FromStr;

use crate::error::{InfiniError, Result};
use crate::model::Model;
use crate::numerics::{kernels, Scalar, Tensor};
use crate::par::{self, Execution};

/// How much context the evaluated model may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContextRegime {
    /// Memory carried across the whole stream.
    #[default]
    Memory,
    /// Every gate closed: each segment sees only itself.
    LocalOnly,
}

impl fmt::Display for ContextRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextRegime::Memory => "memory",
            ContextRegime::LocalOnly => "local",
        })
    }
}

impl FromStr for ContextRegime {
    type Err = InfiniError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory" => Ok(ContextRegime::Memory),
            "local" | "local-only" => Ok(ContextRegime::LocalOnly),
            other => Err(InfiniError::Input(format!(
                "unknown context regime `{other}`; expected `memory` or `local`"
            ))),
        }
    }
}

/// Gate logit that closes the memory path to machine precision.
pub const CLOSED_GATE: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerplexityReport {
    /// Mean next-token cross-entropy (nats).
    pub loss: f64,
    pub perplexity: f64,
    /// Predictions scored.
    pub predictions: usize,
}

/// Summed next-token cross-entropy of one segment's logits; the last row
/// predicts `next` when the stream continues.
fn segment_ce<T: Scalar>(logits: &Tensor<T>, tokens: &[usize], next: Option<usize>) -> (f64, usize) {
    let mut total = 0.0;
    let mut count = 0;
    for t in 0..tokens.len() {
        let target = match tokens.get(t + 1).copied().or(if t + 1 == tokens.len() { next } else { None }) {
            Some(x) => x,
            None => continue,
        };
        let row: Vec<f64> = logits.row(t).iter().map(|v| v.as_f64()).collect();
        total += kernels::log_sum_exp(&row) - row[target];
        count += 1;
    }
    (total, count)
}

/// Streams `tokens` segment by segment with memory carried throughout and
/// reports `exp` of the mean next-token cross-entropy.
pub fn eval_perplexity<T: Scalar>(
    model: &Model<T>,
    tokens: &[usize],
    regime: ContextRegime,
) -> Result<PerplexityReport> {
    if tokens.len() < 2 {
        return Err(InfiniError::Input("perplexity needs at least 2 tokens".into()));
    }
    let closed;
    let model = match regime {
        ContextRegime::Memory => model,
        ContextRegime::LocalOnly => {
            let mut m = model.clone();
            m.set_gates(CLOSED_GATE);
            closed = m;
            &closed
        }
    };
    let n = model.config.segment_len;
    let mut state = model.fresh_state();
    let mut total = 0.0;
    let mut count = 0;
    for start in (0..tokens.len()).step_by(n) {
        let end = (start + n).min(tokens.len());
        let logits = model.stream_step(&mut state, &tokens[start..end])?;
        let (t, c) = segment_ce(&logits, &tokens[start..end], tokens.get(end).copied());
        total += t;
        count += c;
    }
    let loss = total / count as f64;
    Ok(PerplexityReport {
        loss,
        perplexity: loss.exp(),
        predictions: count,
    })
}

/// Evaluates independent streams (in parallel when allowed) and pools
/// their predictions.
pub fn eval_perplexity_many<T: Scalar>(
    model: &Model<T>,
    streams: &[Vec<usize>],
    regime: ContextRegime,
    exec: Execution,
) -> Result<PerplexityReport> {
    if streams.is_empty() {
        return Err(InfiniError::Input("no streams to evaluate".into()));
    }
    let reports = par::map(exec, streams, |s| eval_perplexity(model, s, regime))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let predictions: usize = reports.iter().map(|r| r.predictions).sum();
    let loss = reports.iter().map(|r| r.loss * r.predictions as f64).sum::<f64>() / predictions as f64;
    Ok(PerplexityReport {
        loss,
        perplexity: loss.exp(),
        predictions,
    })
}

//! Synthetic needle recall over a small token vocabulary.
//!
//! Layout of one instance of length `L` with payload length `m`:
//!
//! ```text
//! filler .. NEEDLE p1 .. pm  filler×D  QUERY p1 .. pm
//!           ^cue                       ^L-1-m
//! ```
//!
//! The model must reproduce the payload after the query cue. `D` counts the
//! filler tokens between the payload and the query cue.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{InfiniError, Result};
use crate::model::Model;
use crate::numerics::Scalar;
use crate::par::{self, Execution};
use crate::training::{BatchSource, Sequence};

pub const NEEDLE_CUE: usize = 0;
pub const QUERY_CUE: usize = 1;
const FIRST_PAYLOAD: usize = 2;

/// Where the needle goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// `D` filler tokens between payload and query cue.
    Distance(usize),
    /// Needle cue at this absolute position.
    CueAt(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub payload_len: usize,
    /// Size of the reserved payload sub-vocabulary.
    pub payload_vocab: usize,
    pub placement: Placement,
}

impl Default for RecallConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            seq_len: 256,
            payload_len: 2,
            payload_vocab: 16,
            placement: Placement::Distance(160),
        }
    }
}

impl RecallConfig {
    pub fn filler_range(&self) -> std::ops::Range<usize> {
        FIRST_PAYLOAD + self.payload_vocab..self.vocab_size
    }

    pub fn payload_range(&self) -> std::ops::Range<usize> {
        FIRST_PAYLOAD..FIRST_PAYLOAD + self.payload_vocab
    }

    pub fn query_pos(&self) -> usize {
        self.seq_len - 1 - self.payload_len
    }

    /// Needle cue position implied by the placement.
    pub fn cue_pos(&self) -> Result<usize> {
        let m = self.payload_len;
        let q = self.query_pos();
        match self.placement {
            Placement::Distance(d) => q.checked_sub(m + 1 + d).ok_or_else(|| {
                InfiniError::Input(format!(
                    "distance {d} with payload {m} does not fit in {} tokens",
                    self.seq_len
                ))
            }),
            Placement::CueAt(c) if c + m < q => Ok(c),
            Placement::CueAt(c) => Err(InfiniError::Input(format!(
                "needle at {c} overlaps the query cue at {q}"
            ))),
        }
    }

    /// Filler tokens between payload and query cue.
    pub fn distance(&self) -> Result<usize> {
        Ok(self.query_pos() - self.cue_pos()? - self.payload_len - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.payload_len == 0 || self.payload_vocab == 0 {
            return Err(InfiniError::Input("payload length and vocab must be positive".into()));
        }
        if self.filler_range().is_empty() {
            return Err(InfiniError::Input(format!(
                "vocab of {} leaves no filler tokens after 2 cues and {} payload tokens",
                self.vocab_size, self.payload_vocab
            )));
        }
        if self.seq_len < 2 * self.payload_len + 2 {
            return Err(InfiniError::Input(format!(
                "sequence of {} tokens cannot hold the needle and the answer",
                self.seq_len
            )));
        }
        self.cue_pos().map(|_| ())
    }

    /// Number of distinct payload tuples.
    pub fn payload_space(&self) -> u128 {
        (self.payload_vocab as u128).saturating_pow(self.payload_len as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecallInstance {
    pub tokens: Vec<usize>,
    pub cue_pos: usize,
    pub query_pos: usize,
    pub payload: Vec<usize>,
}

impl RecallInstance {
    /// Rows whose next-token prediction is a payload token.
    pub fn answer_rows(&self) -> std::ops::Range<usize> {
        self.query_pos..self.query_pos + self.payload.len()
    }

    /// Training sequence whose loss covers only the answer.
    pub fn to_sequence(&self) -> Sequence {
        let mut w = vec![0.0; self.tokens.len()];
        for r in self.answer_rows() {
            w[r] = 1.0;
        }
        Sequence {
            tokens: self.tokens.clone(),
            weights: Some(w),
        }
    }
}

fn draw_payload<R: Rng>(cfg: &RecallConfig, rng: &mut R) -> Vec<usize> {
    (0..cfg.payload_len)
        .map(|_| FIRST_PAYLOAD + rng.random_range(0..cfg.payload_vocab))
        .collect()
}

/// Builds one instance around `payload`.
pub fn recall_instance_with<R: Rng>(
    cfg: &RecallConfig,
    payload: Vec<usize>,
    rng: &mut R,
) -> Result<RecallInstance> {
    cfg.validate()?;
    let filler = cfg.filler_range();
    let mut tokens: Vec<usize> = (0..cfg.seq_len)
        .map(|_| rng.random_range(filler.clone()))
        .collect();
    let c = cfg.cue_pos()?;
    let q = cfg.query_pos();
    tokens[c] = NEEDLE_CUE;
    tokens[c + 1..c + 1 + cfg.payload_len].copy_from_slice(&payload);
    tokens[q] = QUERY_CUE;
    tokens[q + 1..].copy_from_slice(&payload);
    Ok(RecallInstance {
        tokens,
        cue_pos: c,
        query_pos: q,
        payload,
    })
}

/// `count` instances whose payloads avoid `exclude` (rejection sampling).
pub fn recall_dataset(
    cfg: &RecallConfig,
    count: usize,
    seed: u64,
    exclude: &HashSet<Vec<usize>>,
) -> Result<Vec<RecallInstance>> {
    cfg.validate()?;
    if exclude.len() as u128 >= cfg.payload_space() {
        return Err(InfiniError::Input("every payload is excluded".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let payload = loop {
                let p = draw_payload(cfg, &mut rng);
                if !exclude.contains(&p) {
                    break p;
                }
            };
            recall_instance_with(cfg, payload, &mut rng)
        })
        .collect()
}

/// Held-out evaluation set over `payloads` pairwise distinct payloads, each
/// placed in `per_payload` instances with fresh filler, plus that payload set
/// for excluding from training. Keep the held-out share of the payload space
/// small: a model trained on the rest can learn which payload tuples occur.
pub fn recall_eval_split(
    cfg: &RecallConfig,
    payloads: usize,
    per_payload: usize,
    seed: u64,
) -> Result<(Vec<RecallInstance>, HashSet<Vec<usize>>)> {
    cfg.validate()?;
    if payloads as u128 * 2 > cfg.payload_space() {
        return Err(InfiniError::Input(format!(
            "{payloads} held-out payloads would exceed half of the {} possible",
            cfg.payload_space()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = cfg.payload_space() as usize;
    let mut held = HashSet::with_capacity(payloads);
    let mut out = Vec::with_capacity(payloads * per_payload);
    for code in sample(&mut rng, space, payloads) {
        let mut rest = code;
        let payload: Vec<usize> = (0..cfg.payload_len)
            .map(|_| {
                let t = FIRST_PAYLOAD + rest % cfg.payload_vocab;
                rest /= cfg.payload_vocab;
                t
            })
            .collect();
        held.insert(payload.clone());
        for _ in 0..per_payload {
            out.push(recall_instance_with(cfg, payload.clone(), &mut rng)?);
        }
    }
    Ok((out, held))
}

/// Training stream: batch `step` is a pure function of `(seed, step)`.
#[derive(Debug, Clone)]
pub struct RecallSource {
    pub config: RecallConfig,
    pub seed: u64,
    pub exclude: HashSet<Vec<usize>>,
}

impl RecallSource {
    pub fn step_seed(&self, step: u64) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(step.wrapping_mul(0xD1B5_4A32_D192_ED03))
    }
}

impl BatchSource for RecallSource {
    fn batch(&self, step: u64, size: usize) -> Result<Vec<Sequence>> {
        Ok(recall_dataset(&self.config, size, self.step_seed(step), &self.exclude)?
            .iter()
            .map(RecallInstance::to_sequence)
            .collect())
    }
}

/// Training stream that interleaves the configured placement with
/// short-range instances: every odd batch entry puts the needle a uniform
/// `0..=near_max` filler tokens before the query cue. The short entries keep
/// the payload-copy path supervised while the long ones train retrieval.
#[derive(Debug, Clone)]
pub struct MixedRecallSource {
    pub base: RecallSource,
    pub near_max: usize,
}

impl BatchSource for MixedRecallSource {
    fn batch(&self, step: u64, size: usize) -> Result<Vec<Sequence>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base.step_seed(step));
        let mut out = Vec::with_capacity(size);
        for i in 0..size {
            let cfg = if i % 2 == 0 {
                self.base.config.clone()
            } else {
                RecallConfig {
                    placement: Placement::Distance(rng.random_range(0..=self.near_max)),
                    ..self.base.config.clone()
                }
            };
            let inst = recall_dataset(&cfg, 1, rng.random(), &self.base.exclude)?;
            out.extend(inst.iter().map(RecallInstance::to_sequence));
        }
        Ok(out)
    }
}

/// Teacher-forced payload-token accuracy: the argmax at every answer row is
/// compared with the payload token it should predict.
pub fn recall_accuracy<T: Scalar>(
    model: &Model<T>,
    instances: &[RecallInstance],
    exec: Execution,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(InfiniError::Input("no instances to evaluate".into()));
    }
    let per = par::map(exec, instances, |inst| -> Result<(usize, usize)> {
        let logits = model.forward_sequence(&inst.tokens)?;
        let mut hits = 0;
        for (k, r) in inst.answer_rows().enumerate() {
            let row = logits.row(r);
            let best = (0..row.len())
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(std::cmp::Ordering::Equal))
                .unwrap_or(0);
            hits += usize::from(best == inst.payload[k]);
        }
        Ok((hits, inst.payload.len()))
    });
    let mut hits = 0;
    let mut total = 0;
    for r in per {
        let (h, t) = r?;
        hits += h;
        total += t;
    }
    Ok(hits as f64 / total as f64)
}

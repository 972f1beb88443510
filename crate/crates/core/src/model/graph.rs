//! Graph builders shared by inference and training.
//!
//! Two orderings compute the same function. [`sequence_logits`] runs each
//! layer over every segment before moving to the next layer (the whole
//! sequence is chunked inside every attention layer and concatenated back).
//! [`segment_logits`] pushes one segment through all layers, which is what
//! streaming and segment-checkpointed training need.

use crate::attention::{infini_attention_forward, LayerMemoryVars, SegmentContext};
use crate::config::{ModelConfig, NORM_EPS};
use crate::error::{InfiniError, Result};
use crate::numerics::{Scalar, Tape, Var};

use super::params::{BlockVars, ModelVars};

pub(crate) fn check_tokens(tokens: &[usize], vocab: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t >= vocab) {
        Some(&id) => Err(InfiniError::TokenOutOfRange { id, vocab }),
        None => Ok(()),
    }
}

fn ffn<T: Scalar>(tape: &mut Tape<T>, x: Var, b: &BlockVars) -> Result<Var> {
    let h = tape.rms_norm(x, b.ffn_norm, T::lit(NORM_EPS))?;
    let h = tape.matmul(h, b.w1)?;
    let h = tape.add(h, b.b1)?;
    let h = tape.gelu(h);
    let h = tape.matmul(h, b.w2)?;
    let h = tape.add(h, b.b2)?;
    Ok(tape.add(x, h)?)
}

fn head<T: Scalar>(tape: &mut Tape<T>, x: Var, vars: &ModelVars) -> Result<Var> {
    let h = tape.rms_norm(x, vars.final_norm, T::lit(NORM_EPS))?;
    Ok(match vars.lm_head {
        Some(w) => tape.matmul(h, w)?,
        None => tape.matmul_t(h, false, vars.embed, true)?,
    })
}

/// Layer-major forward over `tokens` starting at absolute position
/// `offset`, chunked into segments of `cfg.segment_len`.
pub fn sequence_logits<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    tokens: &[usize],
    offset: usize,
    memory: Vec<LayerMemoryVars>,
) -> Result<(Var, Vec<LayerMemoryVars>)> {
    check_tokens(tokens, cfg.vocab_size)?;
    if tokens.is_empty() {
        return Err(InfiniError::Input("empty token sequence".into()));
    }
    let n = cfg.segment_len;
    let mut x = tape.embedding(vars.embed, tokens)?;
    let mut out_memory = Vec::with_capacity(cfg.layers);
    for (b, mut mem) in vars.blocks.iter().zip(memory) {
        let h = tape.rms_norm(x, b.attn_norm, T::lit(NORM_EPS))?;
        let mut outs = Vec::with_capacity(tokens.len().div_ceil(n));
        for start in (0..tokens.len()).step_by(n) {
            let len = n.min(tokens.len() - start);
            let seg = tape.slice_rows(h, start, len)?;
            let ctx = SegmentContext {
                x: seg,
                offset: offset + start,
            };
            let out = infini_attention_forward(tape, ctx, &mem, &b.attn, cfg)?;
            outs.push(out.o);
            mem = out.memory;
        }
        let o = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_rows(&outs)?
        };
        let x1 = tape.add(x, o)?;
        x = ffn(tape, x1, b)?;
        out_memory.push(mem);
    }
    Ok((head(tape, x, vars)?, out_memory))
}

/// One segment (at most `segment_len` tokens) through every layer.
pub fn segment_logits<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    tokens: &[usize],
    offset: usize,
    memory: &[LayerMemoryVars],
) -> Result<(Var, Vec<LayerMemoryVars>)> {
    check_tokens(tokens, cfg.vocab_size)?;
    if tokens.is_empty() || tokens.len() > cfg.segment_len {
        return Err(InfiniError::Input(format!(
            "segment of {} tokens; expected 1..={}",
            tokens.len(),
            cfg.segment_len
        )));
    }
    let mut x = tape.embedding(vars.embed, tokens)?;
    let mut next = Vec::with_capacity(cfg.layers);
    for (b, mem) in vars.blocks.iter().zip(memory) {
        let h = tape.rms_norm(x, b.attn_norm, T::lit(NORM_EPS))?;
        let out = infini_attention_forward(tape, SegmentContext { x: h, offset }, mem, &b.attn, cfg)?;
        let x1 = tape.add(x, out.o)?;
        x = ffn(tape, x1, b)?;
        next.push(out.memory);
    }
    Ok((head(tape, x, vars)?, next))
}

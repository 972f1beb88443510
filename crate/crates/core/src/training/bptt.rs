//! Gradients of the next-token loss through the segment recurrence.
//!
//! Without checkpointing the whole sequence is recorded on one tape. With
//! checkpointing a tape-free forward pass keeps only the memory state at
//! every segment boundary; the backward pass then walks segments in reverse,
//! re-recording one segment at a time with its incoming state as a leaf and
//! seeding the outgoing state with the gradient handed back by the later
//! segment. Peak activation storage is one segment.

use crate::attention::{LayerMemoryVars, MemoryState};
use crate::error::{InfiniError, Result};
use crate::model::{segment_logits, sequence_logits, Model};
use crate::numerics::{Scalar, Tape, Tensor, Var};
use crate::par::{self, Execution};

/// One training sequence. `weights[t]` scales the loss of predicting
/// `tokens[t + 1]` from position `t`; `None` weighs every prediction equally.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub tokens: Vec<usize>,
    pub weights: Option<Vec<f64>>,
}

impl Sequence {
    pub fn plain(tokens: Vec<usize>) -> Self {
        Self {
            tokens,
            weights: None,
        }
    }

    /// Targets, per-row weights (last row 0) and their sum.
    fn targets<T: Scalar>(&self) -> Result<(Vec<usize>, Vec<T>, T)> {
        let n = self.tokens.len();
        if n < 2 {
            return Err(InfiniError::Input("training sequence needs at least 2 tokens".into()));
        }
        let mut targets: Vec<usize> = self.tokens[1..].to_vec();
        targets.push(0);
        let mut weights: Vec<T> = match &self.weights {
            None => vec![T::one(); n],
            Some(w) if w.len() == n || w.len() == n - 1 => w.iter().map(|&x| T::lit(x)).collect(),
            Some(w) => {
                return Err(InfiniError::Input(format!(
                    "{} loss weights for {} tokens",
                    w.len(),
                    n
                )))
            }
        };
        weights.resize(n, T::zero());
        weights[n - 1] = T::zero();
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(InfiniError::Input("loss weights must be finite and >= 0".into()));
        }
        let total: T = weights.iter().copied().sum();
        if total <= T::zero() {
            return Err(InfiniError::Input("loss weights sum to zero".into()));
        }
        Ok((targets, weights, total))
    }
}

/// Loss and parameter gradients (canonical order) for one sequence from
/// fresh memory.
pub fn sequence_gradients<T: Scalar>(
    model: &Model<T>,
    seq: &Sequence,
    checkpointing: bool,
) -> Result<(f64, Vec<Tensor<T>>)> {
    if checkpointing {
        checkpointed(model, seq)
    } else {
        full_tape(model, seq)
    }
}

fn full_tape<T: Scalar>(model: &Model<T>, seq: &Sequence) -> Result<(f64, Vec<Tensor<T>>)> {
    let (targets, weights, total) = seq.targets::<T>()?;
    let cfg = &model.config;
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape, true);
    let fresh = MemoryState::<T>::fresh(cfg);
    let mem = fresh
        .layers
        .iter()
        .map(|l| LayerMemoryVars::bind(&mut tape, l, false))
        .collect::<Result<Vec<_>>>()?;
    let (logits, _) = sequence_logits(&mut tape, &vars, cfg, &seq.tokens, 0, mem)?;
    let loss = tape.cross_entropy(logits, &targets, &weights, total)?;
    let value = tape.value(loss).item().as_f64();
    let grads = tape.grad(loss, &vars.all())?;
    Ok((value, grads))
}

fn checkpointed<T: Scalar>(model: &Model<T>, seq: &Sequence) -> Result<(f64, Vec<Tensor<T>>)> {
    let (targets, weights, total) = seq.targets::<T>()?;
    let cfg = &model.config;
    let n = cfg.segment_len;
    let starts: Vec<usize> = (0..seq.tokens.len()).step_by(n).collect();

    // Forward without gradients, keeping each segment's incoming state.
    let mut boundaries = Vec::with_capacity(starts.len());
    let mut state = MemoryState::<T>::fresh(cfg);
    for &s in &starts {
        let end = (s + n).min(seq.tokens.len());
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape, false);
        let mem = bind_state(&mut tape, &state, false)?;
        let (_, next) = segment_logits(&mut tape, &vars, cfg, &seq.tokens[s..end], s, &mem)?;
        let next_state = MemoryState {
            layers: next.iter().map(|m| m.read(&tape)).collect::<Result<Vec<_>>>()?,
        };
        boundaries.push(std::mem::replace(&mut state, next_state));
    }

    let mut grads: Option<Vec<Tensor<T>>> = None;
    let mut upstream: Option<Vec<Tensor<T>>> = None;
    let mut loss = 0.0;
    for (i, &s) in starts.iter().enumerate().rev() {
        let end = (s + n).min(seq.tokens.len());
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape, true);
        let mem_in = bind_state(&mut tape, &boundaries[i], i > 0)?;
        let (logits, mem_out) = segment_logits(&mut tape, &vars, cfg, &seq.tokens[s..end], s, &mem_in)?;
        let seg_loss = tape.cross_entropy(logits, &targets[s..end], &weights[s..end], total)?;
        loss += tape.value(seg_loss).item().as_f64();

        let mut seeds = vec![(seg_loss, Tensor::scalar(T::one()))];
        if let Some(up) = upstream.take() {
            let out_vars: Vec<Var> = mem_out.iter().flat_map(|l| l.vars()).collect();
            seeds.extend(out_vars.into_iter().zip(up));
        }
        let mut g = tape.backward(seeds)?;
        let param_vars = vars.all();
        let seg_grads: Vec<Tensor<T>> = param_vars
            .iter()
            .map(|&v| g.take(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
            .collect();
        match grads.as_mut() {
            None => grads = Some(seg_grads),
            Some(acc) => acc.iter_mut().zip(&seg_grads).for_each(|(a, b)| a.add_assign(b)),
        }
        if i > 0 {
            let in_vars: Vec<Var> = mem_in.iter().flat_map(|l| l.vars()).collect();
            upstream = Some(
                in_vars
                    .iter()
                    .map(|&v| g.take(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
                    .collect(),
            );
        }
    }
    Ok((loss, grads.expect("at least one segment")))
}

fn bind_state<T: Scalar>(
    tape: &mut Tape<T>,
    state: &MemoryState<T>,
    trainable: bool,
) -> Result<Vec<LayerMemoryVars>> {
    state
        .layers
        .iter()
        .map(|l| LayerMemoryVars::bind(tape, l, trainable))
        .collect()
}

/// Mean loss and mean gradients over a batch. Entries are processed
/// independently (in parallel when `exec` allows) and summed in a fixed
/// pairwise order, so the result does not depend on scheduling.
pub fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    batch: &[Sequence],
    checkpointing: bool,
    exec: Execution,
) -> Result<(f64, Vec<Tensor<T>>)> {
    if batch.is_empty() {
        return Err(InfiniError::Input("empty batch".into()));
    }
    let per = par::map(exec, batch, |s| sequence_gradients(model, s, checkpointing));
    let mut items = Vec::with_capacity(per.len());
    for (i, r) in per.into_iter().enumerate() {
        let (loss, grads) = r?;
        if !loss.is_finite() {
            return Err(InfiniError::NonFiniteLoss { batch_index: i });
        }
        items.push((loss, grads));
    }
    let (loss, mut grads) = par::pairwise_reduce(items, |(la, mut ga), (lb, gb)| {
        ga.iter_mut().zip(&gb).for_each(|(a, b)| a.add_assign(b));
        (la + lb, ga)
    })
    .expect("non-empty batch");
    let inv = 1.0 / batch.len() as f64;
    grads.iter_mut().for_each(|g| g.scale_in_place(T::lit(inv)));
    Ok((loss * inv, grads))
}

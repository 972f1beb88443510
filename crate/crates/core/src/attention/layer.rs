//! One Infini-attention layer on a [`Tape`].
//!
//! Per head, a segment `X` (`N'×d_model`) is projected to raw `Q, K, V`.
//! The memory path reads with position-free `σ(Q)` from the incoming state,
//! then writes position-free `σ(K)`/`V` into it. The local path rotates
//! `Q, K` by absolute position and runs causal softmax attention inside the
//! segment. A per-head gate `sigmoid(β)` blends the two reads, and the heads
//! are concatenated and projected by `W_O`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{ModelConfig, UpdateRule, RETRIEVAL_EPS, ROPE_BASE};
use crate::error::{InfiniError, Result};
use crate::numerics::{kernels, Scalar, Tape, Tensor, Var};

use super::memory::{HeadMemory, LayerMemory};

/// Trainable weights of one layer. Per-head projections are stored as
/// head-major column blocks of a single matrix: columns
/// `h·d_key..(h+1)·d_key` of `w_q` are head `h`'s `W_Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfiniLayerParams<T> {
    /// `d_model × (H·d_key)`
    pub w_q: Tensor<T>,
    /// `d_model × (H·d_key)`
    pub w_k: Tensor<T>,
    /// `d_model × (H·d_value)`
    pub w_v: Tensor<T>,
    /// `(H·d_value) × d_model`
    pub w_o: Tensor<T>,
    /// One gate logit per head.
    pub beta: Tensor<T>,
}

pub(crate) fn normal_tensor<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    std: f64,
    rng: &mut R,
) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::lit(dist.sample(rng)))
}

impl<T: Scalar> InfiniLayerParams<T> {
    /// Gaussian projections scaled by fan-in; `β = 0`.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let (d, h) = (cfg.d_model, cfg.heads);
        let in_std = 1.0 / (d as f64).sqrt();
        let out_std = 1.0 / ((h * cfg.d_value) as f64).sqrt() / (2.0 * cfg.layers as f64).sqrt();
        Self {
            w_q: normal_tensor(&[d, h * cfg.d_key], in_std, rng),
            w_k: normal_tensor(&[d, h * cfg.d_key], in_std, rng),
            w_v: normal_tensor(&[d, h * cfg.d_value], in_std, rng),
            w_o: normal_tensor(&[h * cfg.d_value, d], out_std, rng),
            beta: Tensor::zeros(&[h]),
        }
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let (d, h) = (cfg.d_model, cfg.heads);
        let expect: [(&str, &Tensor<T>, Vec<usize>); 5] = [
            ("w_q", &self.w_q, vec![d, h * cfg.d_key]),
            ("w_k", &self.w_k, vec![d, h * cfg.d_key]),
            ("w_v", &self.w_v, vec![d, h * cfg.d_value]),
            ("w_o", &self.w_o, vec![h * cfg.d_value, d]),
            ("beta", &self.beta, vec![h]),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape.as_slice() {
                return Err(InfiniError::Config(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Records the weights on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> LayerVars {
        let mut put = |t: &Tensor<T>| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        LayerVars {
            w_q: put(&self.w_q),
            w_k: put(&self.w_k),
            w_v: put(&self.w_v),
            w_o: put(&self.w_o),
            beta: put(&self.beta),
        }
    }
}

/// Tape handles for [`InfiniLayerParams`].
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub beta: Var,
}

/// Tape handles for one head's state; `z` is carried as a `d_key × 1` column.
#[derive(Debug, Clone, Copy)]
pub struct HeadMemoryVars {
    pub m: Var,
    pub z: Var,
}

#[derive(Debug, Clone)]
pub struct LayerMemoryVars {
    pub heads: Vec<HeadMemoryVars>,
    pub segments: u64,
}

impl LayerMemoryVars {
    /// Records `mem` on `tape`; as leaves when gradients w.r.t. the
    /// incoming state are needed.
    pub fn bind<T: Scalar>(tape: &mut Tape<T>, mem: &LayerMemory<T>, trainable: bool) -> Result<Self> {
        let heads = mem
            .heads
            .iter()
            .map(|h| {
                let z = h.z.reshape(&[h.z.numel(), 1])?;
                Ok(if trainable {
                    HeadMemoryVars {
                        m: tape.leaf(h.m.clone()),
                        z: tape.leaf(z),
                    }
                } else {
                    HeadMemoryVars {
                        m: tape.constant(h.m.clone()),
                        z: tape.constant(z),
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            heads,
            segments: mem.segments,
        })
    }

    pub fn read<T: Scalar>(&self, tape: &Tape<T>) -> Result<LayerMemory<T>> {
        let heads = self
            .heads
            .iter()
            .map(|h| {
                let z = tape.value(h.z);
                Ok(HeadMemory {
                    m: tape.value(h.m).clone(),
                    z: z.reshape(&[z.numel()])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerMemory {
            heads,
            segments: self.segments,
        })
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.heads.iter().flat_map(|h| [h.m, h.z])
    }
}

/// Hidden states of one segment plus the absolute position of its first row.
#[derive(Debug, Clone, Copy)]
pub struct SegmentContext {
    pub x: Var,
    pub offset: usize,
}

/// Raw (position-free) `Q, K, V` of head `head`.
pub fn project_qkv<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &LayerVars,
    cfg: &ModelConfig,
    head: usize,
) -> Result<(Var, Var, Var)> {
    if tape.value(x).cols() != cfg.d_model {
        return Err(InfiniError::Input(format!(
            "segment has {} columns, d_model is {}",
            tape.value(x).cols(),
            cfg.d_model
        )));
    }
    let mut proj = |w: Var, width: usize| -> Result<Var> {
        let wh = tape.slice_last(w, head * width, width)?;
        Ok(tape.matmul(x, wh)?)
    };
    let q = proj(vars.w_q, cfg.d_key)?;
    let k = proj(vars.w_k, cfg.d_key)?;
    let v = proj(vars.w_v, cfg.d_value)?;
    Ok((q, k, v))
}

/// Rotary transform of `Q, K` by absolute position `offset + t`.
pub fn apply_positions<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    offset: usize,
) -> Result<(Var, Var)> {
    Ok((
        tape.rotary(q, offset, ROPE_BASE)?,
        tape.rotary(k, offset, ROPE_BASE)?,
    ))
}

/// Causal softmax attention within the segment.
pub fn local_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    scale: f64,
) -> Result<Var> {
    let scores = tape.matmul_t(q, false, k, true)?;
    let scores = tape.scale(scores, T::lit(scale));
    let weights = tape.causal_softmax(scores)?;
    Ok(tape.matmul(weights, v)?)
}

/// `σ(Q)M / max(σ(Q)z, ε)` row by row. A fresh state (`M = 0`, `z = 0`)
/// reads exactly zero.
pub fn memory_retrieve<T: Scalar>(tape: &mut Tape<T>, q: Var, m: Var, z: Var) -> Result<Var> {
    if let Some(bad) = tape.value(z).data().iter().find(|v| **v < T::zero()) {
        return Err(InfiniError::Invariant(format!(
            "normalizer has a negative component ({bad})"
        )));
    }
    let sq = tape.elu_plus_one(q);
    let num = tape.matmul(sq, m)?;
    let den = tape.matmul(sq, z)?;
    let den = tape.clamp_min(den, T::lit(RETRIEVAL_EPS));
    Ok(tape.div_rows(num, den)?)
}

fn normalizer_update<T: Scalar>(tape: &mut Tape<T>, z: Var, sk: Var) -> Result<Var> {
    let col = tape.sum_axis(sk, 0)?;
    let shape = tape.shape(z).to_vec();
    let col = tape.reshape(col, &shape)?;
    Ok(tape.add(z, col)?)
}

/// `M + σ(K)ᵀV`, `z + Σ_t σ(K_t)`.
pub fn memory_update_linear<T: Scalar>(
    tape: &mut Tape<T>,
    m: Var,
    z: Var,
    k: Var,
    v: Var,
) -> Result<(Var, Var)> {
    let sk = tape.elu_plus_one(k);
    let bind = tape.matmul_t(sk, true, v, false)?;
    let m_next = tape.add(m, bind)?;
    let z_next = normalizer_update(tape, z, sk)?;
    Ok((m_next, z_next))
}

/// `M + σ(K)ᵀ(V − σ(K)M / σ(K)z)`; `z` follows the linear rule.
pub fn memory_update_delta<T: Scalar>(
    tape: &mut Tape<T>,
    m: Var,
    z: Var,
    k: Var,
    v: Var,
) -> Result<(Var, Var)> {
    let stored = memory_retrieve(tape, k, m, z)?;
    let residual = tape.sub(v, stored)?;
    let sk = tape.elu_plus_one(k);
    let bind = tape.matmul_t(sk, true, residual, false)?;
    let m_next = tape.add(m, bind)?;
    let z_next = normalizer_update(tape, z, sk)?;
    Ok((m_next, z_next))
}

/// `sigmoid(β)·A_mem + (1 − sigmoid(β))·A_dot` for a single-element `beta`.
pub fn gate_combine<T: Scalar>(tape: &mut Tape<T>, a_mem: Var, a_dot: Var, beta: Var) -> Result<Var> {
    let g = tape.sigmoid(beta);
    let one_minus = tape.affine(g, -T::one(), T::one());
    let mem = tape.mul_scalar(a_mem, g)?;
    let dot = tape.mul_scalar(a_dot, one_minus)?;
    Ok(tape.add(mem, dot)?)
}

/// Intermediate per-head reads, kept for inspection and tests.
#[derive(Debug, Clone, Copy)]
pub struct HeadTrace {
    pub a_mem: Var,
    pub a_dot: Var,
    pub a: Var,
}

pub struct LayerOutput {
    pub o: Var,
    pub memory: LayerMemoryVars,
    pub heads: Vec<HeadTrace>,
}

/// One segment through one layer: `(O_s, M_s) = layer(X_s, M_{s-1})`.
pub fn infini_attention_forward<T: Scalar>(
    tape: &mut Tape<T>,
    seg: SegmentContext,
    memory: &LayerMemoryVars,
    vars: &LayerVars,
    cfg: &ModelConfig,
) -> Result<LayerOutput> {
    if memory.heads.len() != cfg.heads {
        return Err(InfiniError::StateMismatch(format!(
            "{} memory heads, config has {}",
            memory.heads.len(),
            cfg.heads
        )));
    }
    for h in &memory.heads {
        if tape.shape(h.m) != [cfg.d_key, cfg.d_value] || tape.shape(h.z) != [cfg.d_key, 1] {
            return Err(InfiniError::StateMismatch(format!(
                "M {:?} / z {:?} for d_key {} d_value {}",
                tape.shape(h.m),
                tape.shape(h.z),
                cfg.d_key,
                cfg.d_value
            )));
        }
    }
    if tape.value(seg.x).cols() != cfg.d_model {
        return Err(InfiniError::Input(format!(
            "segment has {} columns, d_model is {}",
            tape.value(seg.x).cols(),
            cfg.d_model
        )));
    }
    let (dk, dv) = (cfg.d_key, cfg.d_value);
    let q_all = tape.matmul(seg.x, vars.w_q)?;
    let k_all = tape.matmul(seg.x, vars.w_k)?;
    let v_all = tape.matmul(seg.x, vars.w_v)?;
    let scale = cfg.attention_scale();

    let mut outs = Vec::with_capacity(cfg.heads);
    let mut traces = Vec::with_capacity(cfg.heads);
    let mut next = Vec::with_capacity(cfg.heads);
    for (h, mem) in memory.heads.iter().enumerate() {
        let q = tape.slice_last(q_all, h * dk, dk)?;
        let k = tape.slice_last(k_all, h * dk, dk)?;
        let v = tape.slice_last(v_all, h * dv, dv)?;

        let a_mem = memory_retrieve(tape, q, mem.m, mem.z)?;
        let (m_next, z_next) = match cfg.update_rule {
            UpdateRule::Linear => memory_update_linear(tape, mem.m, mem.z, k, v)?,
            UpdateRule::LinearDelta => memory_update_delta(tape, mem.m, mem.z, k, v)?,
        };
        next.push(HeadMemoryVars {
            m: m_next,
            z: z_next,
        });

        let (qp, kp) = apply_positions(tape, q, k, seg.offset)?;
        let a_dot = local_attention(tape, qp, kp, v, scale)?;
        let beta = tape.index(vars.beta, h)?;
        let a = gate_combine(tape, a_mem, a_dot, beta)?;
        traces.push(HeadTrace { a_mem, a_dot, a });
        outs.push(a);
    }
    let cat = tape.concat_last(&outs)?;
    let o = tape.matmul(cat, vars.w_o)?;
    Ok(LayerOutput {
        o,
        memory: LayerMemoryVars {
            heads: next,
            segments: memory.segments + 1,
        },
        heads: traces,
    })
}

/// `sigmoid(β)` for every head of every layer, layer-major.
pub fn gate_scores<T: Scalar>(layers: &[&InfiniLayerParams<T>]) -> Vec<Vec<f64>> {
    layers
        .iter()
        .map(|p| {
            p.beta
                .data()
                .iter()
                .map(|&b| kernels::sigmoid_scalar(b.as_f64()))
                .collect()
        })
        .collect()
}

//! Independent reference implementations on plain nested vectors.
#![allow(dead_code)]

use infini::attention::{infini_attention_forward, InfiniLayerParams, LayerMemory, LayerMemoryVars, SegmentContext};
use infini::numerics::{Tape, Tensor};
use infini::ModelConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn to_tensor(m: &Mat) -> Tensor<f64> {
    let cols = m[0].len();
    Tensor::new(&[m.len(), cols], m.iter().flatten().copied().collect()).unwrap()
}

pub fn from_tensor(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn cols(a: &Mat, start: usize, len: usize) -> Mat {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

pub fn elu1(x: f64) -> f64 {
    if x >= 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Rotation of pair `(2i, 2i+1)` at absolute position `offset + t`.
pub fn rope(x: &Mat, offset: usize) -> Mat {
    let d = x[0].len();
    x.iter()
        .enumerate()
        .map(|(t, row)| {
            let pos = (offset + t) as f64;
            let mut out = row.clone();
            for i in 0..d / 2 {
                let theta = pos * 10_000f64.powf(-(2.0 * i as f64) / d as f64);
                let (s, c) = theta.sin_cos();
                out[2 * i] = row[2 * i] * c - row[2 * i + 1] * s;
                out[2 * i + 1] = row[2 * i] * s + row[2 * i + 1] * c;
            }
            out
        })
        .collect()
}

/// Causal softmax attention by direct summation.
pub fn causal_attention(q: &Mat, k: &Mat, v: &Mat, scale: f64) -> Mat {
    let dv = v[0].len();
    (0..q.len())
        .map(|t| {
            let logits: Vec<f64> = (0..=t)
                .map(|j| scale * q[t].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = w.iter().sum();
            (0..dv)
                .map(|c| (0..=t).map(|j| w[j] / z * v[j][c]).sum())
                .collect()
        })
        .collect()
}

/// Linear attention of `q` over every stored `(k, v)` pair:
/// `σ(q)·Σ σ(k)ᵀv / σ(q)·Σ σ(k)`, zero when nothing is stored.
pub fn linear_attention(q: &Mat, keys: &Mat, values: &Mat, dv: usize) -> Mat {
    q.iter()
        .map(|qr| {
            if keys.is_empty() {
                return vec![0.0; dv];
            }
            let sq: Vec<f64> = qr.iter().map(|&x| elu1(x)).collect();
            let mut num = vec![0.0; dv];
            let mut den = 0.0;
            for (kr, vr) in keys.iter().zip(values) {
                let w: f64 = sq.iter().zip(kr).map(|(a, &b)| a * elu1(b)).sum();
                den += w;
                for c in 0..dv {
                    num[c] += w * vr[c];
                }
            }
            num.iter().map(|n| n / den).collect()
        })
        .collect()
}

/// Largest elementwise `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

pub fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// Per-segment values recorded while streaming one layer.
pub struct SegmentTrace {
    pub a_mem: Vec<Tensor<f64>>,
    pub a_dot: Vec<Tensor<f64>>,
    pub a: Vec<Tensor<f64>>,
    pub o: Tensor<f64>,
    pub memory: LayerMemory<f64>,
}

/// Runs one layer over `segments` (hidden states) in order, carrying memory.
/// `offsets` defaults to consecutive positions.
pub fn run_layer(
    cfg: &ModelConfig,
    params: &InfiniLayerParams<f64>,
    start: LayerMemory<f64>,
    segments: &[Tensor<f64>],
    offsets: Option<&[usize]>,
) -> Vec<SegmentTrace> {
    let mut mem = start;
    let mut pos = 0;
    let mut out = Vec::new();
    for (i, x) in segments.iter().enumerate() {
        let offset = offsets.map_or(pos, |o| o[i]);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let mv = LayerMemoryVars::bind(&mut tape, &mem, false).unwrap();
        let xv = tape.constant(x.clone());
        let r = infini_attention_forward(&mut tape, SegmentContext { x: xv, offset }, &mv, &vars, cfg).unwrap();
        mem = r.memory.read(&tape).unwrap();
        out.push(SegmentTrace {
            a_mem: r.heads.iter().map(|h| tape.value(h.a_mem).clone()).collect(),
            a_dot: r.heads.iter().map(|h| tape.value(h.a_dot).clone()).collect(),
            a: r.heads.iter().map(|h| tape.value(h.a).clone()).collect(),
            o: tape.value(r.o).clone(),
            memory: mem.clone(),
        });
        pos += x.rows();
    }
    out
}

/// Raw per-head projections computed with the reference matmul.
pub fn naive_qkv(x: &Mat, p: &InfiniLayerParams<f64>, cfg: &ModelConfig, h: usize) -> (Mat, Mat, Mat) {
    let w = |w: &Tensor<f64>, width| cols(&from_tensor(w), h * width, width);
    (
        matmul(x, &w(&p.w_q, cfg.d_key)),
        matmul(x, &w(&p.w_k, cfg.d_key)),
        matmul(x, &w(&p.w_v, cfg.d_value)),
    )
}

pub fn layer_params(cfg: &ModelConfig, seed: u64) -> InfiniLayerParams<f64> {
    InfiniLayerParams::init(cfg, &mut rng(seed))
}

pub fn head_cfg(heads: usize, d_key: usize, d_value: usize, d_model: usize, n: usize) -> ModelConfig {
    ModelConfig {
        heads,
        d_key,
        d_value,
        d_model,
        segment_len: n,
        ..ModelConfig::with_heads(1, heads, d_model, 8, n, 16)
    }
}

fn rms_norm(x: &Mat, gain: &[f64]) -> Mat {
    x.iter()
        .map(|r| {
            let ms = r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64;
            let inv = 1.0 / (ms + 1e-6).sqrt();
            r.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Single-segment decoder with softmax attention only (no memory path),
/// tied or untied head.
pub fn plain_transformer_logits(model: &infini::Model<f64>, tokens: &[usize]) -> Mat {
    let cfg = &model.config;
    let p = &model.params;
    let embed = from_tensor(&p.embed);
    let mut x: Mat = tokens.iter().map(|&t| embed[t].clone()).collect();
    for b in &p.blocks {
        let h = rms_norm(&x, b.attn_norm.data());
        let heads: Vec<Mat> = (0..cfg.heads)
            .map(|i| {
                let w = |w: &Tensor<f64>, d| cols(&from_tensor(w), i * d, d);
                let q = matmul(&h, &w(&b.attn.w_q, cfg.d_key));
                let k = matmul(&h, &w(&b.attn.w_k, cfg.d_key));
                let v = matmul(&h, &w(&b.attn.w_v, cfg.d_value));
                causal_attention(&rope(&q, 0), &rope(&k, 0), &v, cfg.attention_scale())
            })
            .collect();
        let cat: Mat = (0..x.len()).map(|t| heads.iter().flat_map(|m| m[t].clone()).collect()).collect();
        let o = matmul(&cat, &from_tensor(&b.attn.w_o));
        let x1: Mat = x.iter().zip(&o).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect()).collect();
        let f = matmul(&rms_norm(&x1, b.ffn_norm.data()), &from_tensor(&b.w1));
        let f: Mat = f
            .iter()
            .map(|r| r.iter().zip(b.b1.data()).map(|(v, c)| gelu(v + c)).collect())
            .collect();
        let f = matmul(&f, &from_tensor(&b.w2));
        x = x1
            .iter()
            .zip(&f)
            .map(|(a, r)| a.iter().zip(r).zip(b.b2.data()).map(|((u, v), c)| u + v + c).collect())
            .collect();
    }
    let h = rms_norm(&x, p.final_norm.data());
    match &p.lm_head {
        Some(w) => matmul(&h, &from_tensor(w)),
        None => {
            let et: Mat = (0..cfg.d_model).map(|j| embed.iter().map(|r| r[j]).collect()).collect();
            matmul(&h, &et)
        }
    }
}

/// Cross-entropy of `logits[t]` against `tokens[t + 1]`, averaged.
pub fn next_token_ce(logits: &Mat, tokens: &[usize]) -> f64 {
    let n = tokens.len() - 1;
    (0..n)
        .map(|t| {
            let row = &logits[t];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[tokens[t + 1]]
        })
        .sum::<f64>()
        / n as f64
}

pub fn tiny_model(seed: u64, rule: infini::UpdateRule) -> infini::Model<f64> {
    let mut cfg = ModelConfig::with_heads(2, 2, 8, 16, 4, 13);
    cfg.update_rule = rule;
    let mut model = infini::Model::new(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0xbeef);
    for b in &mut model.params.blocks {
        for v in b.attn.beta.data_mut() {
            *v = r.random_range(-2.0..2.0);
        }
    }
    model
}

pub fn random_tokens(seed: u64, len: usize, vocab: usize) -> Vec<usize> {
    let mut r = rng(seed);
    (0..len).map(|_| r.random_range(0..vocab)).collect()
}

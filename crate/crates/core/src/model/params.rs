use rand::Rng;

use crate::attention::{normal_tensor, InfiniLayerParams, LayerVars};
use crate::config::ModelConfig;
use crate::error::{InfiniError, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// One pre-norm residual block: attention sub-block then GeLU FFN.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub attn_norm: Tensor<T>,
    pub attn: InfiniLayerParams<T>,
    pub ffn_norm: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// `vocab × d_model`
    pub embed: Tensor<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub final_norm: Tensor<T>,
    /// `d_model × vocab`; absent when the head is tied to `embed`.
    pub lm_head: Option<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let embed_std = 1.0 / (d as f64).sqrt();
        let embed = normal_tensor(&[cfg.vocab_size, d], embed_std, rng);
        let blocks = (0..cfg.layers)
            .map(|_| BlockParams {
                attn_norm: Tensor::full(&[d], T::one()),
                attn: InfiniLayerParams::init(cfg, rng),
                ffn_norm: Tensor::full(&[d], T::one()),
                w1: normal_tensor(&[d, cfg.d_ff], 1.0 / (d as f64).sqrt(), rng),
                b1: Tensor::zeros(&[cfg.d_ff]),
                w2: normal_tensor(
                    &[cfg.d_ff, d],
                    1.0 / (cfg.d_ff as f64).sqrt() / (2.0 * cfg.layers as f64).sqrt(),
                    rng,
                ),
                b2: Tensor::zeros(&[d]),
            })
            .collect();
        let lm_head =
            (!cfg.tie_embeddings).then(|| normal_tensor(&[d, cfg.vocab_size], embed_std, rng));
        Self {
            embed,
            blocks,
            final_norm: Tensor::full(&[d], T::one()),
            lm_head,
        }
    }

    /// Every tensor with its canonical name, in a fixed order shared by
    /// [`ModelParams::tensors_mut`], [`ModelVars::all`] and checkpoints.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |n: &str| format!("block.{i}.{n}");
            out.extend([
                (p("attn_norm"), &b.attn_norm),
                (p("w_q"), &b.attn.w_q),
                (p("w_k"), &b.attn.w_k),
                (p("w_v"), &b.attn.w_v),
                (p("w_o"), &b.attn.w_o),
                (p("beta"), &b.attn.beta),
                (p("ffn_norm"), &b.ffn_norm),
                (p("w1"), &b.w1),
                (p("b1"), &b.b1),
                (p("w2"), &b.w2),
                (p("b2"), &b.b2),
            ]);
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        if let Some(h) = &self.lm_head {
            out.push(("lm_head".to_string(), h));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.embed];
        for b in &mut self.blocks {
            out.extend([
                &mut b.attn_norm,
                &mut b.attn.w_q,
                &mut b.attn.w_k,
                &mut b.attn.w_v,
                &mut b.attn.w_o,
                &mut b.attn.beta,
                &mut b.ffn_norm,
                &mut b.w1,
                &mut b.b1,
                &mut b.w2,
                &mut b.b2,
            ]);
        }
        out.push(&mut self.final_norm);
        if let Some(h) = &mut self.lm_head {
            out.push(h);
        }
        out
    }

    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.named().into_iter().map(|(_, t)| t.clone()).collect()
    }

    /// Replaces every tensor, in [`ModelParams::named`] order.
    pub fn set_tensors(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        let mut slots = self.tensors_mut();
        if slots.len() != values.len() {
            return Err(InfiniError::Input(format!(
                "expected {} tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(InfiniError::Input(format!(
                    "tensor shape {:?} does not match {:?}",
                    v.shape(),
                    slot.shape()
                )));
            }
            **slot = v;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let block = |b: &BlockParams<T>| BlockParams {
            attn_norm: b.attn_norm.cast(),
            attn: InfiniLayerParams {
                w_q: b.attn.w_q.cast(),
                w_k: b.attn.w_k.cast(),
                w_v: b.attn.w_v.cast(),
                w_o: b.attn.w_o.cast(),
                beta: b.attn.beta.cast(),
            },
            ffn_norm: b.ffn_norm.cast(),
            w1: b.w1.cast(),
            b1: b.b1.cast(),
            w2: b.w2.cast(),
            b2: b.b2.cast(),
        };
        ModelParams {
            embed: self.embed.cast(),
            blocks: self.blocks.iter().map(block).collect(),
            final_norm: self.final_norm.cast(),
            lm_head: self.lm_head.as_ref().map(Tensor::cast),
        }
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.blocks.len() != cfg.layers {
            return Err(InfiniError::Config(format!(
                "{} blocks, config has {} layers",
                self.blocks.len(),
                cfg.layers
            )));
        }
        if self.embed.shape() != [cfg.vocab_size, cfg.d_model] {
            return Err(InfiniError::Config(format!(
                "embed has shape {:?}",
                self.embed.shape()
            )));
        }
        if self.lm_head.is_some() == cfg.tie_embeddings {
            return Err(InfiniError::Config(
                "lm_head presence disagrees with tie_embeddings".into(),
            ));
        }
        self.blocks.iter().try_for_each(|b| b.attn.check(cfg))
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> ModelVars {
        let mut put = |t: &Tensor<T>| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let embed = put(&self.embed);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let attn_norm = put(&b.attn_norm);
            let attn = LayerVars {
                w_q: put(&b.attn.w_q),
                w_k: put(&b.attn.w_k),
                w_v: put(&b.attn.w_v),
                w_o: put(&b.attn.w_o),
                beta: put(&b.attn.beta),
            };
            blocks.push(BlockVars {
                attn_norm,
                attn,
                ffn_norm: put(&b.ffn_norm),
                w1: put(&b.w1),
                b1: put(&b.b1),
                w2: put(&b.w2),
                b2: put(&b.b2),
            });
        }
        let final_norm = put(&self.final_norm);
        let lm_head = self.lm_head.as_ref().map(put);
        ModelVars {
            embed,
            blocks,
            final_norm,
            lm_head,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub attn_norm: Var,
    pub attn: LayerVars,
    pub ffn_norm: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub embed: Var,
    pub blocks: Vec<BlockVars>,
    pub final_norm: Var,
    pub lm_head: Option<Var>,
}

impl ModelVars {
    /// All handles in [`ModelParams::named`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.embed];
        for b in &self.blocks {
            out.extend([
                b.attn_norm,
                b.attn.w_q,
                b.attn.w_k,
                b.attn.w_v,
                b.attn.w_o,
                b.attn.beta,
                b.ffn_norm,
                b.w1,
                b.b1,
                b.w2,
                b.b2,
            ]);
        }
        out.push(self.final_norm);
        out.extend(self.lm_head);
        out
    }
}

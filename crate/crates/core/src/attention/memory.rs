use crate::config::ModelConfig;
use crate::error::{InfiniError, Result};
use crate::numerics::container::{Container, FieldValue};
use crate::numerics::{Scalar, Tensor};

pub const STATE_KIND: &str = "memory_state";

/// Associative matrix and normalizer of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMemory<T> {
    /// `d_key × d_value`
    pub m: Tensor<T>,
    /// `d_key`
    pub z: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMemory<T> {
    pub heads: Vec<HeadMemory<T>>,
    /// Segments absorbed so far.
    pub segments: u64,
}

/// Bounded recurrent state of one stream: one [`LayerMemory`] per layer.
/// Its size is fixed by the config and never grows with input length.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState<T> {
    pub layers: Vec<LayerMemory<T>>,
}

impl<T: Scalar> LayerMemory<T> {
    pub fn fresh(cfg: &ModelConfig) -> Self {
        Self {
            heads: (0..cfg.heads)
                .map(|_| HeadMemory {
                    m: Tensor::zeros(&[cfg.d_key, cfg.d_value]),
                    z: Tensor::zeros(&[cfg.d_key]),
                })
                .collect(),
            segments: 0,
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.heads.iter().map(|h| h.m.numel() + h.z.numel()).sum()
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.heads.len() != cfg.heads {
            return Err(InfiniError::StateMismatch(format!(
                "{} heads, config has {}",
                self.heads.len(),
                cfg.heads
            )));
        }
        for (h, head) in self.heads.iter().enumerate() {
            if head.m.shape() != [cfg.d_key, cfg.d_value] || head.z.shape() != [cfg.d_key] {
                return Err(InfiniError::StateMismatch(format!(
                    "head {h}: M {:?}, z {:?}; expected [{}, {}] and [{}]",
                    head.m.shape(),
                    head.z.shape(),
                    cfg.d_key,
                    cfg.d_value,
                    cfg.d_key
                )));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> MemoryState<T> {
    pub fn fresh(cfg: &ModelConfig) -> Self {
        Self {
            layers: (0..cfg.layers).map(|_| LayerMemory::fresh(cfg)).collect(),
        }
    }

    /// `l·H·(d_key·d_value + d_key)` for a well-formed state.
    pub fn scalar_count(&self) -> usize {
        self.layers.iter().map(LayerMemory::scalar_count).sum()
    }

    pub fn segments(&self) -> u64 {
        self.layers.first().map_or(0, |l| l.segments)
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layers.len() != cfg.layers {
            return Err(InfiniError::StateMismatch(format!(
                "{} layers, config has {}",
                self.layers.len(),
                cfg.layers
            )));
        }
        self.layers.iter().try_for_each(|l| l.check(cfg))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(STATE_KIND);
        c.set_field("segment_counter", FieldValue::Int(self.segments() as i64));
        for (l, layer) in self.layers.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                c.push_tensor(&format!("mem.{l}.{h}.M"), &head.m);
                c.push_tensor(&format!("mem.{l}.{h}.z"), &head.z);
            }
        }
        c
    }

    /// Rebuilds a state for `cfg`, rejecting any shape disagreement.
    pub fn from_container(c: &Container, cfg: &ModelConfig) -> Result<Self> {
        let segments = c.int_field("segment_counter")?;
        let expected = 2 * cfg.layers * cfg.heads;
        let present = c.tensors.iter().filter(|(n, _)| n.starts_with("mem.")).count();
        if present != expected {
            return Err(InfiniError::StateMismatch(format!(
                "{present} memory tensors, config needs {expected}"
            )));
        }
        let mut state = Self::fresh(cfg);
        for (l, layer) in state.layers.iter_mut().enumerate() {
            layer.segments = segments as u64;
            for (h, head) in layer.heads.iter_mut().enumerate() {
                head.m = c.require(&format!("mem.{l}.{h}.M"))?;
                head.z = c.require(&format!("mem.{l}.{h}.z"))?;
            }
        }
        state.check(cfg)?;
        Ok(state)
    }
}

//! Infini-attention: local causal attention plus a compressive memory read
//! and written through linear attention, blended per head by a learned gate.

mod layer;
mod memory;

pub use layer::{
    apply_positions, gate_combine, gate_scores, infini_attention_forward, local_attention,
    memory_retrieve, memory_update_delta, memory_update_linear, project_qkv, HeadMemoryVars,
    HeadTrace, InfiniLayerParams, LayerMemoryVars, LayerOutput, LayerVars, SegmentContext,
};
pub(crate) use layer::normal_tensor;
pub use memory::{HeadMemory, LayerMemory, MemoryState, STATE_KIND};

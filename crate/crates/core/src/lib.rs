//! Infini-attention transformer: a segment-recurrent decoder whose attention
//! layers keep a bounded compressive memory alongside local causal attention.

pub mod attention;
pub mod config;
pub mod error;
pub mod model;
pub mod numerics;
pub mod par;
pub mod tasks;
pub mod training;

pub use config::{ModelConfig, UpdateRule};
pub use error::{InfiniError, Result};
pub use model::{GenerateOptions, Model, ModelState};

//! Segment-unrolled training: loss gradients through the memory recurrence,
//! warmup-plus-cosine schedule, Adam, and a resumable driver.

mod bptt;
mod config;
mod optim;
mod trainer;

pub use bptt::{batch_gradients, sequence_gradients, Sequence};
pub use config::{lr_schedule, TrainConfig};
pub use optim::{global_norm, optimizer_step, AdamParams, OptimizerState, StepOutcome};
pub use trainer::{bptt_step, BatchSource, StepRecord, StepReport, Trainer};

use std::path::Path;
use std::time::Instant;

use crate::error::{InfiniError, Result};
use crate::model::Model;
use crate::numerics::container::{Container, FieldValue};
use crate::numerics::{Scalar, Tensor};

use super::bptt::{batch_gradients, Sequence};
use super::config::{lr_schedule, TrainConfig};
use super::optim::{optimizer_step, AdamParams, OptimizerState};

/// Produces the batch for a given step. Implementations must be pure
/// functions of `(step, size)` so interrupted runs resume exactly.
pub trait BatchSource: Sync {
    fn batch(&self, step: u64, size: usize) -> Result<Vec<Sequence>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub applied: bool,
}

/// One update: batch gradients, optional gate freeze, clipping, Adam.
/// `step` is the 1-based index of this update and selects the learning rate.
pub fn bptt_step<T: Scalar>(
    model: &mut Model<T>,
    batch: &[Sequence],
    cfg: &TrainConfig,
    opt: &mut OptimizerState<T>,
    step: u64,
) -> Result<StepReport> {
    for s in batch {
        if s.tokens.len() != cfg.seq_len {
            return Err(InfiniError::Input(format!(
                "sequence of {} tokens; training length is {}",
                s.tokens.len(),
                cfg.seq_len
            )));
        }
    }
    let (loss, mut grads) = batch_gradients(model, batch, cfg.checkpointing, cfg.execution)?;
    if cfg.freeze_gates {
        zero_gate_grads(model, &mut grads);
    }
    let lr = lr_schedule(step, cfg);
    let hp = AdamParams {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
    };
    let out = optimizer_step(&mut model.params, &mut grads, opt, lr, cfg.grad_clip_norm, hp)?;
    Ok(StepReport {
        loss,
        grad_norm: out.grad_norm,
        lr,
        applied: out.applied,
    })
}

fn zero_gate_grads<T: Scalar>(model: &Model<T>, grads: &mut [Tensor<T>]) {
    for ((name, _), g) in model.params.named().iter().zip(grads.iter_mut()) {
        if name.ends_with(".beta") {
            g.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub wallclock: f64,
    pub applied: bool,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str = "step,lr,loss,grad_norm,wallclock_s,applied";

    pub fn log_line(&self) -> String {
        format!(
            "step={} lr={:.6e} loss={:.6} grad_norm={:.4} wallclock={:.2}s{}",
            self.step,
            self.lr,
            self.loss,
            self.grad_norm,
            self.wallclock,
            if self.applied { "" } else { " skipped" }
        )
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{}",
            self.step, self.lr, self.loss, self.grad_norm, self.wallclock, self.applied as u8
        )
    }
}

/// Model, optimizer state and step counter for a resumable run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub opt: OptimizerState<T>,
    pub config: TrainConfig,
    /// Completed updates.
    pub step: u64,
    started: Option<Instant>,
    elapsed_before: f64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate(&model.config)?;
        let opt = OptimizerState::new(&model.params);
        Ok(Self {
            model,
            opt,
            config,
            step: 0,
            started: None,
            elapsed_before: 0.0,
        })
    }

    pub fn finished(&self) -> bool {
        self.step >= self.config.total_steps
    }

    fn wallclock(&mut self) -> f64 {
        let start = *self.started.get_or_insert_with(Instant::now);
        self.elapsed_before + start.elapsed().as_secs_f64()
    }

    /// Runs the next update on `source.batch(step)`.
    pub fn step_once<S: BatchSource + ?Sized>(&mut self, source: &S) -> Result<StepRecord> {
        self.wallclock();
        let batch = source.batch(self.step, self.config.batch_size)?;
        let next = self.step + 1;
        let r = bptt_step(&mut self.model, &batch, &self.config, &mut self.opt, next)?;
        self.step = next;
        Ok(StepRecord {
            step: next,
            lr: r.lr,
            loss: r.loss,
            grad_norm: r.grad_norm,
            wallclock: self.wallclock(),
            applied: r.applied,
        })
    }

    /// Steps until `total_steps` or until `on_step` returns false.
    pub fn run<S, F>(&mut self, source: &S, mut on_step: F) -> Result<()>
    where
        S: BatchSource + ?Sized,
        F: FnMut(&mut Self, &StepRecord) -> Result<bool>,
    {
        while !self.finished() {
            let rec = self.step_once(source)?;
            if !on_step(self, &rec)? {
                break;
            }
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = self.model.to_container();
        c.set_field("train.completed_steps", FieldValue::Int(self.step as i64));
        c.set_field(
            "train.elapsed_s",
            FieldValue::Float(self.elapsed_before + self.started.map_or(0.0, |s| s.elapsed().as_secs_f64())),
        );
        for (k, v) in self.config.fields() {
            c.set_field(&k, v);
        }
        self.opt.write_to(&mut c, &self.model.params);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let model = Model::<T>::from_container(c)?;
        let config = TrainConfig::from_fields(c)?;
        config.validate(&model.config)?;
        let opt = OptimizerState::read_from(c, &model.params)?;
        let elapsed_before = match c.field("train.elapsed_s") {
            Some(FieldValue::Float(f)) => *f,
            _ => 0.0,
        };
        Ok(Self {
            step: c.int_field("train.completed_steps")? as u64,
            model,
            opt,
            config,
            started: None,
            elapsed_before,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_container().write(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

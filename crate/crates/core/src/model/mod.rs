//! Decoder-only language model built from Infini-attention blocks.

mod graph;
mod params;
mod sampling;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{gate_scores, LayerMemoryVars, MemoryState};
use crate::config::ModelConfig;
use crate::error::{InfiniError, Result};
use crate::numerics::container::{Container, FieldValue};
use crate::numerics::{kernels, Scalar, Tape, Tensor};

pub use graph::{segment_logits, sequence_logits};
pub(crate) use graph::check_tokens;
pub use params::{BlockParams, BlockVars, ModelParams, ModelVars};
pub use sampling::{sample_token, GenerateOptions};

pub const CHECKPOINT_KIND: &str = "checkpoint";

/// Per-stream recurrent state: compressive memory of every layer plus the
/// absolute position of the next token.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub memory: MemoryState<T>,
    pub position: usize,
}

impl<T: Scalar> ModelState<T> {
    pub fn fresh(cfg: &ModelConfig) -> Self {
        Self {
            memory: MemoryState::fresh(cfg),
            position: 0,
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.memory.scalar_count()
    }

    pub fn to_container(&self) -> Container {
        let mut c = self.memory.to_container();
        c.set_field("position", FieldValue::Int(self.position as i64));
        c
    }

    pub fn from_container(c: &Container, cfg: &ModelConfig) -> Result<Self> {
        if c.kind != crate::attention::STATE_KIND {
            return Err(InfiniError::StateMismatch(format!(
                "container kind `{}` is not a memory state",
                c.kind
            )));
        }
        Ok(Self {
            memory: MemoryState::from_container(c, cfg)?,
            position: c.int_field("position")? as usize,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_container().write(path)?)
    }

    pub fn load(path: &Path, cfg: &ModelConfig) -> Result<Self> {
        Self::from_container(&Container::read(path)?, cfg)
    }

    fn bind(&self, tape: &mut Tape<T>) -> Result<Vec<LayerMemoryVars>> {
        self.memory
            .layers
            .iter()
            .map(|l| LayerMemoryVars::bind(tape, l, false))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&config, &mut rng);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        params.check(&config)?;
        Ok(Self { config, params })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn fresh_state(&self) -> ModelState<T> {
        ModelState::fresh(&self.config)
    }

    /// Sets every gate logit to `value` (e.g. −30 closes the memory path).
    pub fn set_gates(&mut self, value: f64) {
        for b in &mut self.params.blocks {
            for v in b.attn.beta.data_mut() {
                *v = T::lit(value);
            }
        }
    }

    /// `sigmoid(β)` as an `l × H` table, layer-major.
    pub fn gate_scores(&self) -> Vec<Vec<f64>> {
        let layers: Vec<_> = self.params.blocks.iter().map(|b| &b.attn).collect();
        gate_scores(&layers)
    }

    /// Logits `T × vocab` for a whole sequence from fresh memory.
    pub fn forward_sequence(&self, tokens: &[usize]) -> Result<Tensor<T>> {
        Ok(self.forward_from(&self.fresh_state(), tokens)?.0)
    }

    /// Layer-major forward continuing from `state`.
    pub fn forward_from(
        &self,
        state: &ModelState<T>,
        tokens: &[usize],
    ) -> Result<(Tensor<T>, ModelState<T>)> {
        state.memory.check(&self.config)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let mem = state.bind(&mut tape)?;
        let (logits, mem) =
            sequence_logits(&mut tape, &vars, &self.config, tokens, state.position, mem)?;
        let memory = MemoryState {
            layers: mem
                .iter()
                .map(|m| m.read(&tape))
                .collect::<Result<Vec<_>>>()?,
        };
        let next = ModelState {
            memory,
            position: state.position + tokens.len(),
        };
        Ok((tape.value(logits).clone(), next))
    }

    /// Processes one segment (`1..=segment_len` tokens) and advances `state`.
    pub fn stream_step(&self, state: &mut ModelState<T>, tokens: &[usize]) -> Result<Tensor<T>> {
        let (logits, next) = self.peek_segment(state, tokens)?;
        *state = next;
        Ok(logits)
    }

    fn peek_segment(
        &self,
        state: &ModelState<T>,
        tokens: &[usize],
    ) -> Result<(Tensor<T>, ModelState<T>)> {
        state.memory.check(&self.config)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let mem = state.bind(&mut tape)?;
        let (logits, mem) =
            segment_logits(&mut tape, &vars, &self.config, tokens, state.position, &mem)?;
        let memory = MemoryState {
            layers: mem
                .iter()
                .map(|m| m.read(&tape))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok((
            tape.value(logits).clone(),
            ModelState {
                memory,
                position: state.position + tokens.len(),
            },
        ))
    }

    /// Mean next-token cross-entropy of positions `0..T-1` predicting `1..T`.
    pub fn lm_loss(&self, tokens: &[usize]) -> Result<f64> {
        if tokens.len() < 2 {
            return Err(InfiniError::Input("lm_loss needs at least 2 tokens".into()));
        }
        let logits = self.forward_sequence(tokens)?;
        mean_next_token_ce(&logits, tokens)
    }

    /// Samples `max_new` tokens after `prompt`. Completed segments are
    /// committed to memory; the active partial segment is recomputed for
    /// every new token.
    pub fn generate(&self, prompt: &[usize], opts: &GenerateOptions) -> Result<Vec<usize>> {
        opts.validate()?;
        if prompt.is_empty() {
            return Err(InfiniError::Input("empty prompt".into()));
        }
        check_tokens(prompt, self.config.vocab_size)?;
        let n = self.config.segment_len;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut state = self.fresh_state();
        let full = (prompt.len() - 1) / n * n;
        for seg in prompt[..full].chunks(n) {
            self.stream_step(&mut state, seg)?;
        }
        let mut active: Vec<usize> = prompt[full..].to_vec();
        let mut out = Vec::with_capacity(opts.max_new);
        loop {
            let (logits, next) = self.peek_segment(&state, &active)?;
            let last: Vec<f64> = logits
                .row(logits.rows() - 1)
                .iter()
                .map(|v| v.as_f64())
                .collect();
            let token = sample_token(&last, opts.temperature, opts.top_p, &mut rng);
            out.push(token);
            if out.len() == opts.max_new {
                break;
            }
            if active.len() == n {
                state = next;
                active.clear();
            }
            active.push(token);
        }
        Ok(out)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(CHECKPOINT_KIND);
        for (k, v) in self.config.fields() {
            c.set_field(&k, v);
        }
        c.set_field("dtype", FieldValue::Text(T::DTYPE.name().into()));
        for (name, t) in self.params.named() {
            c.push_tensor(&format!("param.{name}"), t);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != CHECKPOINT_KIND {
            return Err(InfiniError::Input(format!(
                "container kind `{}` is not a checkpoint",
                c.kind
            )));
        }
        let config = ModelConfig::from_fields(c)?;
        config.validate()?;
        let mut params = ModelParams::<T>::init(&config, &mut ChaCha8Rng::seed_from_u64(0));
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        let values = names
            .iter()
            .map(|n| c.require::<T>(&format!("param.{n}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        params.set_tensors(values)?;
        Self::from_parts(config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_container().write(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Mean cross-entropy of `logits[t]` against `tokens[t + 1]`.
pub fn mean_next_token_ce<T: Scalar>(logits: &Tensor<T>, tokens: &[usize]) -> Result<f64> {
    if tokens.len() < 2 || logits.rows() != tokens.len() {
        return Err(InfiniError::Input(format!(
            "{} logit rows for {} tokens",
            logits.rows(),
            tokens.len()
        )));
    }
    let total: f64 = (0..tokens.len() - 1)
        .map(|t| {
            let row: Vec<f64> = logits.row(t).iter().map(|v| v.as_f64()).collect();
            kernels::log_sum_exp(&row) - row[tokens[t + 1]]
        })
        .sum();
    Ok(total / (tokens.len() - 1) as f64)
}

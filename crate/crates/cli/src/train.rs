use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use infini::numerics::container::Container;
use infini::numerics::Scalar;
use infini::tasks::{
    recall_accuracy, recall_eval_split, MixedRecallSource, RecallInstance, RecallSource, TokenFile,
    CLOSED_GATE,
};
use infini::training::{BatchSource, Sequence, StepRecord, TrainConfig, Trainer};
use infini::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::run_config::{Precision, RunConfig, Task};

/// Added to the run seed for the held-out recall split.
const EVAL_SEED_OFFSET: u64 = 0x5EED;

/// Random windows of `seq_len` tokens from one long stream.
struct TextSource {
    tokens: Vec<usize>,
    seq_len: usize,
    seed: u64,
}

impl BatchSource for TextSource {
    fn batch(&self, step: u64, size: usize) -> infini::Result<Vec<Sequence>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Ok((0..size)
            .map(|_| {
                let start = rng.random_range(0..=self.tokens.len() - self.seq_len);
                Sequence::plain(self.tokens[start..start + self.seq_len].to_vec())
            })
            .collect())
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step-{step:06}.ckpt"))
}

/// Trains from scratch, or continues the run stored in `resume`.
pub fn cmd_train(config: Option<&Path>, overrides: &[(String, String)], resume: Option<&Path>) -> Result<()> {
    match resume {
        None => {
            let cfg = RunConfig::resolve(config, overrides)?;
            match cfg.precision {
                Precision::F32 => run::<f32>(cfg, None),
                Precision::F64 => run::<f64>(cfg, None),
            }
        }
        Some(path) => {
            if config.is_some() {
                bail!("--config cannot be combined with --resume; the checkpoint carries its config");
            }
            let c = Container::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
            let model = ModelConfig::from_fields(&c)?;
            let train = TrainConfig::from_fields(&c)?;
            let stored = RunConfig::read_from(&c, model, train)?;
            let mut cfg = stored.clone();
            cfg.apply(overrides)?;
            if cfg.model != stored.model || cfg.precision != stored.precision {
                bail!("model settings and precision are fixed by the checkpoint being resumed");
            }
            cfg.validate()?;
            match cfg.precision {
                Precision::F32 => run::<f32>(cfg, Some(c)),
                Precision::F64 => run::<f64>(cfg, Some(c)),
            }
        }
    }
}

fn open_metrics(path: &Path, append: bool) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let fresh = !append || !path.exists();
    let mut f = if fresh {
        File::create(path)
    } else {
        OpenOptions::new().append(true).open(path)
    }
    .with_context(|| format!("opening metrics file {}", path.display()))?;
    if fresh {
        writeln!(f, "{}", StepRecord::CSV_HEADER)?;
    }
    Ok(f)
}

fn save<T: Scalar>(trainer: &Trainer<T>, cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.checkpoint_dir)
        .with_context(|| format!("creating {}", cfg.checkpoint_dir.display()))?;
    let path = checkpoint_path(&cfg.checkpoint_dir, trainer.step);
    let mut c = trainer.to_container();
    cfg.write_to(&mut c);
    c.write(&path).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn run<T: Scalar>(cfg: RunConfig, resume: Option<Container>) -> Result<()> {
    let mut trainer = match &resume {
        None => Trainer::new(Model::<T>::new(cfg.model.clone(), cfg.train.seed)?, cfg.train.clone())?,
        Some(c) => {
            let mut t = Trainer::<T>::from_container(c)?;
            t.config = cfg.train.clone();
            t
        }
    };
    let mut held_out: Vec<RecallInstance> = Vec::new();
    let source: Box<dyn BatchSource> = match cfg.task {
        Task::Recall => {
            let rc = cfg.recall();
            let exclude = if cfg.recall_eval_payloads > 0 && cfg.recall_eval_repeats > 0 {
                let (eval, held) = recall_eval_split(
                    &rc,
                    cfg.recall_eval_payloads,
                    cfg.recall_eval_repeats,
                    cfg.train.seed + EVAL_SEED_OFFSET,
                )?;
                held_out = eval;
                held
            } else {
                Default::default()
            };
            let base = RecallSource {
                config: rc,
                seed: cfg.train.seed,
                exclude,
            };
            match cfg.recall_near_max {
                Some(near_max) => Box::new(MixedRecallSource { base, near_max }),
                None => Box::new(base),
            }
        }
        Task::Text => {
            let path = cfg.train_path();
            let tokens = TokenFile::read(&path)
                .with_context(|| format!("reading training tokens {}", path.display()))?
                .concatenated();
            if tokens.len() < cfg.train.seq_len {
                bail!(
                    "{} holds {} tokens, fewer than seq_len = {}",
                    path.display(),
                    tokens.len(),
                    cfg.train.seq_len
                );
            }
            if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.model.vocab_size) {
                bail!("token {bad} in {} exceeds vocab_size = {}", path.display(), cfg.model.vocab_size);
            }
            Box::new(TextSource {
                tokens,
                seq_len: cfg.train.seq_len,
                seed: cfg.train.seed,
            })
        }
    };
    let mut metrics = open_metrics(&cfg.metrics_file, resume.is_some())?;
    let mut last_saved = None;
    trainer.run(source.as_ref(), |t, rec| {
        writeln!(metrics, "{}", rec.csv_row())?;
        if rec.step % cfg.log_every == 0 || t.finished() {
            eprintln!("{}", rec.log_line());
        }
        if cfg.checkpoint_every > 0 && rec.step % cfg.checkpoint_every == 0 {
            save(t, &cfg).map_err(|e| infini::InfiniError::Input(format!("{e:#}")))?;
            last_saved = Some(rec.step);
        }
        Ok(true)
    })?;
    metrics.flush()?;
    if last_saved != Some(trainer.step) {
        let path = save(&trainer, &cfg)?;
        eprintln!("checkpoint {}", path.display());
    }
    if !held_out.is_empty() {
        let exec = cfg.train.execution;
        let acc = recall_accuracy(&trainer.model, &held_out, exec)?;
        let mut closed = trainer.model.clone();
        closed.set_gates(CLOSED_GATE);
        let acc_closed = recall_accuracy(&closed, &held_out, exec)?;
        println!("recall_accuracy={acc:.4} recall_accuracy_gates_closed={acc_closed:.4}");
    }
    Ok(())
}

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use infini::model::mean_next_token_ce;
use infini::numerics::container::Container;
use infini::par::Execution;
use infini::tasks::{
    compression_ratio, eval_perplexity_many, human_count, memory_footprint, passkey_evaluate,
    passkey_generate, passkey_suite, recall_dataset, recall_eval_split, ByteTokenizer,
    ContextRegime, Family, FootprintDescriptor, FootprintParams, PasskeyInstance, TokenFile,
};
use infini::{InfiniError, Model, ModelState};

use crate::run_config::RunConfig;

/// Bad invocation: reported with exit status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Gate scores below this or above its complement mark a specialized head.
pub const SPECIALIZED_MARGIN: f64 = 0.1;

pub fn load_model(path: &Path) -> Result<Model<f64>> {
    let c = Container::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    Model::from_container(&c).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Reads a token file, treating an empty one as a usage error.
fn read_tokens(path: &Path) -> Result<TokenFile> {
    let meta = fs::metadata(path).with_context(|| format!("reading {}", path.display()))?;
    if meta.len() == 0 {
        return Err(Usage(format!("token file {} is empty", path.display())).into());
    }
    let file = TokenFile::read(path).with_context(|| format!("reading {}", path.display()))?;
    if file.records.iter().all(|r| r.tokens.is_empty()) {
        return Err(Usage(format!("token file {} holds no tokens", path.display())).into());
    }
    Ok(file)
}

pub fn cmd_gates(checkpoint: &Path, out: &mut dyn Write) -> Result<()> {
    let model = load_model(checkpoint)?;
    writeln!(out, "layer,head,score,role")?;
    for (l, layer) in model.gate_scores().iter().enumerate() {
        for (h, &s) in layer.iter().enumerate() {
            let role = if !(SPECIALIZED_MARGIN..=1.0 - SPECIALIZED_MARGIN).contains(&s) {
                "specialized"
            } else {
                "mixer"
            };
            writeln!(out, "{l},{h},{s:.6},{role}")?;
        }
    }
    Ok(())
}

pub fn cmd_footprint(
    families: &[Family],
    params: &FootprintParams,
    out: &mut dyn Write,
) -> Result<()> {
    let usage = |e: InfiniError| -> anyhow::Error {
        match e {
            InfiniError::MissingParameter { .. } => Usage(format!("{e} (pass --{})", flag_of(&e))).into(),
            other => other.into(),
        }
    };
    let infini = memory_footprint(&FootprintDescriptor {
        family: Family::Infini,
        params: params.clone(),
    })
    .ok();
    let mut rows = Vec::with_capacity(families.len());
    for &family in families {
        let f = memory_footprint(&FootprintDescriptor {
            family,
            params: params.clone(),
        })
        .map_err(usage)?;
        let ratio = match infini {
            Some(i) => format!("{}x", compression_ratio(f.memory, i.memory)?),
            None => String::new(),
        };
        rows.push(format!("{family},{},{},{},{ratio}", f.memory, human_count(f.memory), f.context));
    }
    writeln!(out, "family,memory,memory_human,context,ratio_vs_infini")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    Ok(())
}

fn flag_of(e: &InfiniError) -> String {
    match e {
        InfiniError::MissingParameter { field, .. } => field.replace('_', "-"),
        _ => String::new(),
    }
}

pub fn cmd_stream(
    checkpoint: &Path,
    tokens: &Path,
    resume: Option<&Path>,
    state_out: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let model = load_model(checkpoint)?;
    let tokens = read_tokens(tokens)?.concatenated();
    let mut state = match resume {
        Some(p) => ModelState::load(p, &model.config)
            .with_context(|| format!("loading state {}", p.display()))?,
        None => model.fresh_state(),
    };
    let n = model.config.segment_len;
    writeln!(out, "segment,position,tokens,predictions,loss")?;
    for seg in tokens.chunks(n) {
        let index = state.position / n;
        let position = state.position;
        let logits = model.stream_step(&mut state, seg)?;
        let loss = if seg.len() > 1 {
            format!("{:.12}", mean_next_token_ce(&logits, seg)?)
        } else {
            String::new()
        };
        writeln!(out, "{index},{position},{},{},{loss}", seg.len(), seg.len() - 1)?;
    }
    state
        .save(state_out)
        .with_context(|| format!("writing state {}", state_out.display()))?;
    Ok(())
}

pub fn cmd_eval_ppl(
    checkpoint: &Path,
    tokens: &Path,
    regimes: &[ContextRegime],
    exec: Execution,
    out: &mut dyn Write,
) -> Result<()> {
    let model = load_model(checkpoint)?;
    let streams: Vec<Vec<usize>> = read_tokens(tokens)?
        .records
        .into_iter()
        .map(|r| r.tokens)
        .filter(|t| t.len() >= 2)
        .collect();
    if streams.is_empty() {
        return Err(Usage("perplexity needs a record of at least 2 tokens".into()).into());
    }
    writeln!(out, "regime,streams,predictions,loss,perplexity")?;
    for &regime in regimes {
        let r = eval_perplexity_many(&model, &streams, regime, exec)?;
        writeln!(
            out,
            "{regime},{},{},{:.6},{:.6}",
            streams.len(),
            r.predictions,
            r.loss,
            r.perplexity
        )?;
    }
    Ok(())
}

pub enum PasskeySpec {
    Suite { total_repeats: usize, count: usize, seed: u64 },
    Single { x: usize, y: usize, passkey: Option<u32>, seed: u64 },
}

pub fn cmd_passkey_gen(spec: &PasskeySpec, out: &mut dyn Write) -> Result<()> {
    let instances = match *spec {
        PasskeySpec::Suite { total_repeats, count, seed } => passkey_suite(total_repeats, count, seed)?,
        PasskeySpec::Single { x, y, passkey, seed } => vec![passkey_generate(x, y, passkey, seed)?],
    };
    for inst in instances {
        writeln!(out, "{}", inst.to_json())?;
    }
    Ok(())
}

pub fn cmd_passkey_eval(checkpoint: &Path, input: &Path, exec: Execution, out: &mut dyn Write) -> Result<()> {
    let model = load_model(checkpoint)?;
    let f = fs::File::open(input).with_context(|| format!("reading {}", input.display()))?;
    let mut instances = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        instances.push(
            PasskeyInstance::from_json(&line).with_context(|| format!("{} line {}", input.display(), i + 1))?,
        );
    }
    if instances.is_empty() {
        return Err(Usage(format!("{} holds no passkey records", input.display())).into());
    }
    let scores = passkey_evaluate(&model, &instances, exec)?;
    for (inst, score) in instances.iter().zip(&scores) {
        let rec = serde_json::json!({
            "passkey": inst.passkey,
            "x_repeats": inst.x_repeats,
            "y_repeats": inst.y_repeats,
            "position": inst.position,
            "score": score,
        });
        writeln!(out, "{rec}")?;
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    eprintln!("mean_score={mean:.4} over {} prompts", scores.len());
    Ok(())
}

pub fn cmd_recall_gen(cfg: &RunConfig, count: usize, seed: u64, held_out: bool, path: &Path) -> Result<()> {
    let rc = cfg.recall();
    let instances = if held_out {
        recall_eval_split(&rc, count, 1, seed)?.0
    } else {
        recall_dataset(&rc, count, seed, &Default::default())?
    };
    TokenFile::from_recall(&instances)?
        .write(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Byte-tokenizes a text file: one record per file, or per line.
pub fn cmd_encode(input: &Path, per_line: bool, path: &Path) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let tok = ByteTokenizer;
    let streams: Vec<Vec<usize>> = if per_line {
        text.lines().filter(|l| !l.is_empty()).map(|l| tok.encode(l)).collect()
    } else {
        vec![tok.encode(&text)]
    };
    if streams.iter().all(|s| s.is_empty()) {
        bail!("{} holds no text", input.display());
    }
    TokenFile::plain(streams)
        .write(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

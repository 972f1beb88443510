mod commands;
mod run_config;
mod train;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use infini::par::Execution;
use infini::tasks::{ContextRegime, Family, FootprintParams};

use commands::{PasskeySpec, Usage};
use run_config::{parse_overrides, RunConfig, CONFIG_ENV};

#[derive(Parser)]
#[command(name = "infini", version, about = "Train and evaluate Infini-attention models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on synthetic recall or a token file; writes metrics CSV and checkpoints.
    Train(TrainArgs),
    /// Perplexity of a checkpoint on a token file.
    EvalPpl(EvalPplArgs),
    /// Passkey retrieval prompts.
    #[command(subcommand)]
    Passkey(PasskeyCmd),
    /// Synthetic recall data.
    #[command(subcommand)]
    Recall(RecallCmd),
    /// Gate score of every head as CSV.
    Gates(GatesArgs),
    /// Memory footprint and context length per model family as CSV.
    Footprint(FootprintArgs),
    /// Stream a token file segment by segment, carrying memory in a state file.
    Stream(StreamArgs),
    /// Byte-tokenize a text file into a token file.
    Encode(EncodeArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Print the merged config and exit.
    #[arg(long)]
    print_config: bool,
    /// Config overrides as `--key=value`; they take precedence over the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Continue the run stored in this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalPplArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Token file; every record is an independent stream.
    #[arg(long)]
    tokens: PathBuf,
    /// `memory`, `local`, or `both`.
    #[arg(long, default_value = "both")]
    regime: String,
    /// Evaluate streams one at a time.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum PasskeyCmd {
    /// Write passkey prompts as NDJSON.
    Gen(PasskeyGenArgs),
    /// Score a checkpoint on NDJSON prompts; writes one NDJSON result per prompt.
    Eval(PasskeyEvalArgs),
}

#[derive(Args)]
struct PasskeyGenArgs {
    /// Filler repeats per prompt; the key lands at a uniform split.
    #[arg(long, conflicts_with_all = ["x", "y"])]
    total_repeats: Option<usize>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Filler repeats before the key.
    #[arg(long, requires = "y")]
    x: Option<usize>,
    /// Filler repeats after the key.
    #[arg(long, requires = "x")]
    y: Option<usize>,
    /// Fixed key (4 or 5 digits) for a single prompt.
    #[arg(long, requires = "x")]
    passkey: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PasskeyEvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum RecallCmd {
    /// Write recall instances to a token file.
    Gen(RecallGenArgs),
}

#[derive(Args)]
struct RecallGenArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw pairwise distinct payloads, as for a held-out split.
    #[arg(long)]
    held_out: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct GatesArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct FootprintArgs {
    /// Families, comma separated: infini, xl, compressive, memorizing, rmt, autocompressors.
    #[arg(long, value_delimiter = ',', required = true)]
    family: Vec<Family>,
    /// Start from 12 layers, 8 heads of width 128, d_model 1024, segments of 2048.
    #[arg(long)]
    reference: bool,
    #[arg(long)]
    segment_len: Option<u64>,
    #[arg(long)]
    segments: Option<u64>,
    #[arg(long)]
    layers: Option<u64>,
    #[arg(long)]
    heads: Option<u64>,
    #[arg(long)]
    d_key: Option<u64>,
    #[arg(long)]
    d_value: Option<u64>,
    #[arg(long)]
    d_model: Option<u64>,
    /// Compressed memory slots per layer.
    #[arg(long)]
    compressed: Option<u64>,
    /// Compression ratio.
    #[arg(long)]
    ratio: Option<u64>,
    /// Soft-prompt tokens.
    #[arg(long)]
    prompts: Option<u64>,
    /// Summary steps.
    #[arg(long)]
    steps: Option<u64>,
    /// kNN memory size in tokens.
    #[arg(long)]
    knn_tokens: Option<u64>,
    /// Layers holding a kNN memory.
    #[arg(long)]
    knn_layers: Option<u64>,
}

impl FootprintArgs {
    fn params(&self) -> FootprintParams {
        let mut p = if self.reference {
            FootprintParams::reference(self.segments.unwrap_or(1))
        } else {
            FootprintParams::default()
        };
        let given = [
            ("segment_len", self.segment_len),
            ("segments", self.segments),
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_key", self.d_key),
            ("d_value", self.d_value),
            ("d_model", self.d_model),
            ("compressed", self.compressed),
            ("ratio", self.ratio),
            ("prompts", self.prompts),
            ("steps", self.steps),
            ("knn_tokens", self.knn_tokens),
            ("knn_layers", self.knn_layers),
        ];
        for (k, v) in given {
            if let Some(v) = v {
                p.set(k, v).expect("known footprint key");
            }
        }
        p
    }
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    tokens: PathBuf,
    /// Continue from this state file instead of an empty memory.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Where to write the final state.
    #[arg(long, default_value = "stream.state")]
    state_out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    /// One record per non-empty line.
    #[arg(long)]
    lines: bool,
    #[arg(long)]
    out: PathBuf,
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn output(path: Option<&PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Resolves the run config; `Ok(None)` after `--print-config`.
fn run_config(args: &ConfigArgs) -> anyhow::Result<Option<RunConfig>> {
    let overrides = parse_overrides(&args.overrides).map_err(|e| Usage(e.to_string()))?;
    let cfg = RunConfig::resolve(args.config.as_deref(), &overrides)?;
    if args.print_config {
        print!("{}", cfg.to_kv());
        return Ok(None);
    }
    Ok(Some(cfg))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.cmd {
        Cmd::Train(a) => {
            drop(stdout);
            if a.config.print_config {
                run_config(&a.config)?;
                return Ok(());
            }
            let overrides = parse_overrides(&a.config.overrides).map_err(|e| Usage(e.to_string()))?;
            train::cmd_train(a.config.config.as_deref(), &overrides, a.resume.as_deref())
        }
        Cmd::EvalPpl(a) => {
            let regimes = match a.regime.as_str() {
                "both" => vec![ContextRegime::Memory, ContextRegime::LocalOnly],
                r => vec![r.parse().map_err(|e: infini::InfiniError| Usage(e.to_string()))?],
            };
            commands::cmd_eval_ppl(&a.checkpoint, &a.tokens, &regimes, exec(a.sequential), &mut stdout)
        }
        Cmd::Passkey(PasskeyCmd::Gen(a)) => {
            let spec = match (a.total_repeats, a.x, a.y) {
                (Some(total_repeats), _, _) => PasskeySpec::Suite {
                    total_repeats,
                    count: a.count,
                    seed: a.seed,
                },
                (None, Some(x), Some(y)) => PasskeySpec::Single {
                    x,
                    y,
                    passkey: a.passkey,
                    seed: a.seed,
                },
                _ => return Err(Usage("pass --total-repeats, or --x and --y".into()).into()),
            };
            drop(stdout);
            let mut out = output(a.out.as_ref())?;
            commands::cmd_passkey_gen(&spec, &mut out)?;
            out.flush()?;
            Ok(())
        }
        Cmd::Passkey(PasskeyCmd::Eval(a)) => {
            commands::cmd_passkey_eval(&a.checkpoint, &a.input, exec(a.sequential), &mut stdout)
        }
        Cmd::Recall(RecallCmd::Gen(a)) => {
            drop(stdout);
            match run_config(&a.config)? {
                Some(cfg) => commands::cmd_recall_gen(&cfg, a.count, a.seed, a.held_out, &a.out),
                None => Ok(()),
            }
        }
        Cmd::Gates(a) => commands::cmd_gates(&a.checkpoint, &mut stdout),
        Cmd::Footprint(a) => commands::cmd_footprint(&a.family, &a.params(), &mut stdout),
        Cmd::Stream(a) => {
            commands::cmd_stream(&a.checkpoint, &a.tokens, a.resume.as_deref(), &a.state_out, &mut stdout)
        }
        Cmd::Encode(a) => commands::cmd_encode(&a.input, a.lines, &a.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

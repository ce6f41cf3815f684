//! `pete`: train, evaluate, embed, benchmark and inspect Fourier-embedding
//! sentence encoders.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "pete", version, about = "Fourier token embeddings: training, evaluation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an encoder contrastively on sentence pairs.
    #[command(after_help = config::keys_help())]
    Train(TrainArgs),
    /// Zero-shot similarity evaluation on a scored TSV file.
    EvalSts(EvalArgs),
    /// Print sentence vectors for the given texts.
    Embed(EmbedArgs),
    /// Time fused, naive and table-lookup base embeddings.
    Bench(BenchArgs),
    /// Distance statistics of the base vectors over a vocabulary.
    AnalyzeCollisions(CollisionArgs),
    /// Closed-form parameter counts for a model configuration.
    #[command(after_help = config::keys_help())]
    ParamCount(ParamCountArgs),
}

/// Model overrides shared by `train` and `param-count`.
#[derive(Debug, Args)]
struct ModelFlags {
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    /// Feed-forward expansion, e.g. 4 or 1/4.
    #[arg(long)]
    ffn_factor: Option<String>,
    /// Expansion of the block refining the Fourier base vector.
    #[arg(long)]
    head_ffn_factor: Option<String>,
    /// Final d x d projection of the pooled vector.
    #[arg(long)]
    pool_proj: Option<bool>,
    /// fourier or learned.
    #[arg(long)]
    embedding: Option<String>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelFlags {
    fn entries(&self) -> Vec<(String, String)> {
        let mut e = Vec::new();
        push(&mut e, "n_layers", &self.layers);
        push(&mut e, "n_heads", &self.heads);
        push(&mut e, "d_model", &self.d_model);
        push(&mut e, "ffn_factor", &self.ffn_factor);
        push(&mut e, "head_ffn_factor", &self.head_ffn_factor);
        push(&mut e, "pool_proj", &self.pool_proj);
        push(&mut e, "embedding", &self.embedding);
        push(&mut e, "vocab_size", &self.vocab_size);
        push(&mut e, "dropout_p", &self.dropout);
        push(&mut e, "max_seq_len", &self.max_seq_len);
        push(&mut e, "seed", &self.seed);
        e
    }
}

fn push<T: ToString>(e: &mut Vec<(String, String)>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        e.push((key.to_string(), v.to_string()));
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// key=value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Vocabulary file, one token per line.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// JSONL pairs (sentence1, sentence2, optional label).
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Size of the synthetic corpus used when no pairs file is given.
    #[arg(long)]
    synthetic_pairs: Option<usize>,
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Global gradient-norm cap.
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long, conflicts_with = "grad_clip")]
    no_grad_clip: bool,
    #[arg(long)]
    max_len: Option<usize>,
}

impl TrainArgs {
    fn entries(&self) -> Vec<(String, String)> {
        let mut e = Vec::new();
        push(&mut e, "vocab", &self.vocab.as_ref().map(|p| p.display().to_string()));
        push(&mut e, "pairs", &self.pairs.as_ref().map(|p| p.display().to_string()));
        push(&mut e, "synthetic_pairs", &self.synthetic_pairs);
        push(&mut e, "topics", &self.topics);
        push(&mut e, "out_dir", &self.out_dir.as_ref().map(|p| p.display().to_string()));
        e.extend(self.model.entries());
        push(&mut e, "batch_size", &self.batch_size);
        push(&mut e, "total_steps", &self.steps);
        push(&mut e, "peak_lr", &self.lr);
        push(&mut e, "warmup_steps", &self.warmup);
        push(&mut e, "weight_decay", &self.weight_decay);
        push(&mut e, "log_every", &self.log_every);
        push(&mut e, "checkpoint_every", &self.checkpoint_every);
        push(&mut e, "grad_clip", &self.grad_clip);
        if self.no_grad_clip {
            e.push(("grad_clip".into(), "none".into()));
        }
        push(&mut e, "max_len", &self.max_len);
        e
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Tab-separated score, sentence1, sentence2.
    #[arg(long)]
    sts: PathBuf,
    /// Defaults to vocab.txt beside the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Defaults to the model's max_seq_len.
    #[arg(long)]
    max_len: Option<usize>,
    /// Writes eval.json and eval.txt here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Text to embed; repeat for several.
    #[arg(long, required = true)]
    text: Vec<String>,
    /// Defaults to vocab.txt beside the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Also writes embeddings.tsv here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 30522)]
    vocab_size: usize,
    #[arg(long, default_value_t = 256)]
    d_model: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 128)]
    seq: usize,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads per iteration; defaults to PETE_THREADS or 1.
    #[arg(long)]
    threads: Option<usize>,
    /// Writes bench.csv here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CollisionArgs {
    #[arg(long, default_value_t = 30522)]
    vocab_size: usize,
    #[arg(long, default_value_t = 256)]
    d_model: usize,
    /// Compare a random subset of this many ids exhaustively instead of
    /// scanning the whole vocabulary.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 1_000_000)]
    random_pairs: usize,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes collisions.csv and collisions.txt here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ParamCountArgs {
    /// key=value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

/// Failure classes mapped to exit codes.
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

pub fn threads_from_env() -> usize {
    std::env::var("PETE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::EvalSts(a) => commands::eval_sts(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::AnalyzeCollisions(a) => commands::analyze_collisions(&a),
        Command::ParamCount(a) => commands::param_count_cmd(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            eprintln!("run `pete --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

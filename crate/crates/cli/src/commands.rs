//! Subcommand bodies.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use log::info;
use pete_core::bench::{bench_embedding, results_csv, BenchOptions};
use pete_core::checkpoint::{load_checkpoint, read_header, save_checkpoint};
use pete_core::data::{load_pairs_jsonl, load_sts_tsv, load_vocab, pad_rows, synth_pairs, tokenize, Vocab};
use pete_core::eval::{evaluate_sts, EvalOptions, SentenceEncoder};
use pete_core::fourier::{collision_stats, CollisionOptions, EmbeddingConfig};
use pete_core::model::{param_count, Model};
use pete_core::training::{smoothed_tail, train_loop, TrainOutputs};
use pete_core::{Model32, Model64, TokenGrid};

use crate::config::{parse_kv, RunConfig};
use crate::{threads_from_env, BenchArgs, CollisionArgs, EmbedArgs, EvalArgs, Failure, ParamCountArgs, TrainArgs};

type Outcome = Result<(), Failure>;

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn resolve(config: Option<&PathBuf>, flags: Vec<(String, String)>) -> anyhow::Result<RunConfig> {
    let mut entries = match config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            parse_kv(&text, &path.display().to_string())?
        }
        None => Vec::new(),
    };
    entries.extend(flags);
    RunConfig::from_entries(&entries)
}

pub fn train(args: &TrainArgs) -> Outcome {
    let mut rc = resolve(args.config.as_ref(), args.entries()).usage()?;
    let vocab_path = rc
        .vocab
        .clone()
        .ok_or_else(|| anyhow!("train needs a vocabulary: pass --vocab or set vocab= in the config"))
        .usage()?;
    rc.validate().usage()?;
    let vocab = load_vocab(&vocab_path).usage()?;
    rc.model.vocab_size = vocab.len();
    rc.validate().usage()?;

    let (pairs, source) = match &rc.pairs {
        Some(path) => {
            let (pairs, summary) = load_pairs_jsonl(path, &vocab, rc.train.max_len).runtime()?;
            info!("loaded {} of {} rows from {}", summary.kept, summary.total, path.display());
            (pairs, path.display().to_string())
        }
        None => {
            let pairs = synth_pairs(rc.synthetic_pairs, &vocab, rc.train.seed, rc.topics).usage()?;
            (pairs, format!("synthetic ({} pairs, {} topics)", rc.synthetic_pairs, rc.topics))
        }
    };

    let out = rc.out_dir.clone();
    create_dir(&out).runtime()?;
    write_file(&out.join("vocab.txt"), &vocab.to_file_string()).runtime()?;
    write_file(&out.join("run.cfg"), &rc.to_kv()).runtime()?;
    let outputs = TrainOutputs {
        checkpoint_dir: (rc.train.checkpoint_every > 0).then(|| out.join("checkpoints")),
        metrics_csv: Some(out.join("metrics.csv")),
    };

    let model = Model32::build(rc.model.clone()).usage()?;
    println!(
        "training {} embedding, {} parameters, {} pairs from {}",
        rc.model.embedding_kind,
        param_count(&rc.model).total,
        pairs.len(),
        source
    );
    let started = Instant::now();
    let outcome = train_loop(model, &pairs, &vocab, &rc.train, &outputs).runtime()?;
    let final_path = out.join("final.ckpt");
    save_checkpoint(&outcome.model, &final_path).runtime()?;

    let first = outcome.losses.first().copied().unwrap_or(f64::NAN);
    let tail = smoothed_tail(&outcome.losses, 20);
    println!("steps            {}", outcome.losses.len());
    println!("initial loss     {first:.4}");
    println!("final loss (avg) {tail:.4}");
    println!("elapsed          {:.1}s", started.elapsed().as_secs_f64());
    println!("checkpoint       {}", final_path.display());
    Ok(())
}

/// A checkpoint of either scalar width.
enum Loaded {
    F32(Model32),
    F64(Model64),
}

impl Loaded {
    fn open(path: &Path) -> anyhow::Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        let header = read_header(&bytes).with_context(|| format!("checkpoint {}", path.display()))?;
        Ok(match header.dtype.as_str() {
            "f64" => Loaded::F64(load_checkpoint(path)?),
            _ => Loaded::F32(load_checkpoint(path)?),
        })
    }

    fn max_seq_len(&self) -> usize {
        match self {
            Loaded::F32(m) => m.config().max_seq_len,
            Loaded::F64(m) => m.config().max_seq_len,
        }
    }

    fn vocab_size(&self) -> usize {
        match self {
            Loaded::F32(m) => m.config().vocab_size,
            Loaded::F64(m) => m.config().vocab_size,
        }
    }
}

impl SentenceEncoder for Loaded {
    fn encode_rows(&self, ids: &TokenGrid, mask: &[u8]) -> pete_core::eval::Result<Vec<Vec<f64>>> {
        match self {
            Loaded::F32(m) => m.encode_rows(ids, mask),
            Loaded::F64(m) => m.encode_rows(ids, mask),
        }
    }
}

fn vocab_for(checkpoint: &Path, explicit: Option<&PathBuf>) -> anyhow::Result<Vocab> {
    let path = match explicit {
        Some(p) => p.clone(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).join("vocab.txt"),
    };
    if !path.exists() {
        bail!("vocabulary {} not found; pass --vocab", path.display());
    }
    Ok(load_vocab(&path)?)
}

fn open_model(checkpoint: &Path, vocab: Option<&PathBuf>, max_len: Option<usize>) -> Result<(Loaded, Vocab, usize), Failure> {
    let vocab = vocab_for(checkpoint, vocab).usage()?;
    let model = Loaded::open(checkpoint).runtime()?;
    if vocab.len() > model.vocab_size() {
        return Err(Failure::Usage(anyhow!(
            "vocabulary has {} tokens but the checkpoint embeds only {}",
            vocab.len(),
            model.vocab_size()
        )));
    }
    let max_len = max_len.unwrap_or(model.max_seq_len());
    if max_len > model.max_seq_len() {
        return Err(Failure::Usage(anyhow!(
            "max_len {max_len} exceeds the checkpoint's max_seq_len {}",
            model.max_seq_len()
        )));
    }
    Ok((model, vocab, max_len))
}

pub fn eval_sts(args: &EvalArgs) -> Outcome {
    let (model, vocab, max_len) = open_model(&args.checkpoint, args.vocab.as_ref(), args.max_len)?;
    let (pairs, summary) = load_sts_tsv(&args.sts, &vocab, max_len).runtime()?;
    if summary.skipped > 0 {
        info!("skipped {} malformed rows of {}", summary.skipped, summary.total);
    }
    let opts = EvalOptions {
        batch_size: args.batch_size,
        max_len,
        threads: threads_from_env(),
    };
    let report = evaluate_sts(&model, &pairs, &vocab, opts).runtime()?;
    print!("{}", report.to_text());
    println!("{}", report.to_json());
    if let Some(dir) = &args.out_dir {
        create_dir(dir).runtime()?;
        write_file(&dir.join("eval.json"), &(report.to_json() + "\n")).runtime()?;
        write_file(&dir.join("eval.txt"), &report.to_text()).runtime()?;
    }
    Ok(())
}

pub fn embed(args: &EmbedArgs) -> Outcome {
    let (model, vocab, max_len) = open_model(&args.checkpoint, args.vocab.as_ref(), args.max_len)?;
    let rows = args
        .text
        .iter()
        .map(|t| tokenize(t, &vocab, max_len))
        .collect::<Result<Vec<_>, _>>()
        .usage()?;
    let seq = rows.iter().map(Vec::len).max().unwrap_or(1);
    let (grid, mask) = pad_rows(&rows, seq, vocab.pad());
    let vectors = model.encode_rows(&grid, &mask).runtime()?;
    let mut tsv = String::new();
    for (text, v) in args.text.iter().zip(&vectors) {
        let line: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
        println!("{}", line.join(" "));
        tsv.push_str(&format!("{}\t{}\n", text.replace(['\t', '\n'], " "), line.join("\t")));
    }
    if let Some(dir) = &args.out_dir {
        create_dir(dir).runtime()?;
        write_file(&dir.join("embeddings.tsv"), &tsv).runtime()?;
    }
    Ok(())
}

pub fn bench(args: &BenchArgs) -> Outcome {
    let cfg = EmbeddingConfig::new(args.vocab_size, args.d_model).usage()?;
    let opts = BenchOptions {
        batch: args.batch,
        seq: args.seq,
        warmup_iters: args.warmup,
        measured_iters: args.iters,
        seed: args.seed,
        threads: args.threads.unwrap_or_else(threads_from_env),
    };
    let results = bench_embedding(&cfg, &opts).map_err(|e| match e {
        pete_core::bench::BenchError::Disagreement { .. } => Failure::Runtime(e.into()),
        other => Failure::Usage(other.into()),
    })?;
    println!(
        "V={} d={} batch={}x{} threads={} iters={} (+{} warm-up)",
        args.vocab_size, args.d_model, args.batch, args.seq, opts.threads, args.iters, args.warmup
    );
    println!("{:<8} {:>16} {:>8} {:>14}", "variant", "tokens/s (median)", "cv", "table bytes");
    for r in &results {
        println!(
            "{:<8} {:>16.0} {:>8.4} {:>14}",
            r.variant.name(),
            r.tokens_per_second,
            r.cv,
            r.bytes_table
        );
    }
    if let Some(dir) = &args.out_dir {
        create_dir(dir).runtime()?;
        write_file(&dir.join("bench.csv"), &results_csv(&results)).runtime()?;
    }
    Ok(())
}

pub fn analyze_collisions(args: &CollisionArgs) -> Outcome {
    let cfg = EmbeddingConfig::new(args.vocab_size, args.d_model).usage()?;
    let opts = CollisionOptions {
        sample: args.sample,
        random_pairs: args.random_pairs,
        bins: args.bins,
        seed: args.seed,
    };
    let stats = collision_stats::<f64>(&cfg, &opts).usage()?;
    let report = stats.report();
    print!("{report}");
    if let Some(dir) = &args.out_dir {
        create_dir(dir).runtime()?;
        write_file(&dir.join("collisions.csv"), &stats.to_csv()).runtime()?;
        write_file(&dir.join("collisions.txt"), &report).runtime()?;
    }
    Ok(())
}

fn millions(n: usize) -> String {
    format!("{:.3}m", n as f64 / 1e6)
}

pub fn param_count_cmd(args: &ParamCountArgs) -> Outcome {
    let rc = resolve(args.config.as_ref(), args.model.entries()).usage()?;
    rc.model.validate().usage()?;
    let c = param_count(&rc.model);
    let m = &rc.model;
    println!(
        "{} embedding, {} layer(s), {} head(s), d_model {}, vocab {}",
        m.embedding_kind, m.n_layers, m.n_heads, m.d_model, m.vocab_size
    );
    for (name, n) in [
        ("embedding table", c.embedding_table),
        ("embedding head", c.embedding_head),
        ("attention", c.attention),
        ("feed-forward", c.ffn),
        ("norm gains", c.norms),
        ("pooled projection", c.pool_proj),
        ("logit scale", c.logit_scale),
    ] {
        println!("  {name:<18} {n:>12}");
    }
    println!("  {:<18} {:>12} ({})", "total", c.total, millions(c.total));
    // Sanity: the closed form matches what the builder allocates.
    if c.total < 50_000_000 {
        let built = Model::<f32>::build(rc.model.clone()).runtime()?;
        if built.params().scalar_count() != c.total {
            return Err(Failure::Runtime(anyhow!(
                "allocated {} parameters, closed form says {}",
                built.params().scalar_count(),
                c.total
            )));
        }
    }
    Ok(())
}

//! `key=value` run configuration shared by the config file and the flags.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use pete_core::model::ModelConfig;
use pete_core::training::TrainConfig;

/// Every accepted key with its default, as shown in `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("n_layers", "1"),
    ("n_heads", "1"),
    ("d_model", "256"),
    ("ffn_factor", "4"),
    ("head_ffn_factor", "1/4"),
    ("pool_proj", "true"),
    ("embedding", "fourier"),
    ("vocab_size", "30522 (train: taken from the vocabulary)"),
    ("dropout_p", "0 (0.1 is the usual learned-baseline value)"),
    ("max_seq_len", "128"),
    ("seed", "0"),
    ("batch_size", "128"),
    ("total_steps", "122700"),
    ("peak_lr", "2e-5"),
    ("warmup_steps", "1000"),
    ("weight_decay", "0.01"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("adam_eps", "1e-8"),
    ("log_every", "100"),
    ("checkpoint_every", "0 (off)"),
    ("grad_clip", "1.0 (none disables)"),
    ("max_len", "128"),
    ("vocab", "(required for train)"),
    ("pairs", "(JSONL; synthetic corpus when absent)"),
    ("synthetic_pairs", "2048"),
    ("topics", "4"),
    ("out_dir", "out"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub synthetic_pairs: usize,
    pub topics: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            vocab: None,
            pairs: None,
            synthetic_pairs: 2048,
            topics: 4,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn canonical(key: &str) -> &str {
    match key {
        "embedding_kind" => "embedding",
        "layers" => "n_layers",
        "heads" => "n_heads",
        "dropout" => "dropout_p",
        other => other,
    }
}

/// Parses `key=value` lines; `#` starts a comment. Unknown keys are errors.
pub fn parse_kv(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{origin}:{}: expected key=value, got {line:?}", n + 1))?;
        let key = canonical(k.trim()).to_string();
        if !KEYS.iter().any(|(known, _)| *known == key) {
            bail!("{origin}:{}: unknown key {key:?}", n + 1);
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("key {key}: expected {what}, got {value:?} ({e})"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => bail!("key {key}: expected a boolean, got {value:?}"),
    }
}

impl RunConfig {
    /// Applies entries in order, so later entries (flags) override earlier
    /// ones (the file).
    pub fn from_entries(entries: &[(String, String)]) -> Result<Self> {
        let mut rc = RunConfig::default();
        for (key, v) in entries {
            let m = &mut rc.model;
            let t = &mut rc.train;
            let k = key.as_str();
            match k {
                "n_layers" => m.n_layers = parse(k, v, "a positive integer")?,
                "n_heads" => m.n_heads = parse(k, v, "a positive integer")?,
                "d_model" => m.d_model = parse(k, v, "a positive even integer")?,
                "ffn_factor" => m.ffn_factor = parse(k, v, "a positive rational such as 4 or 1/4")?,
                "head_ffn_factor" => m.head_ffn_factor = parse(k, v, "a positive rational such as 4 or 1/4")?,
                "pool_proj" => m.pool_proj = parse_bool(k, v)?,
                "embedding" => m.embedding_kind = parse(k, v, "fourier or learned")?,
                "vocab_size" => m.vocab_size = parse(k, v, "an integer")?,
                "dropout_p" => m.dropout_p = parse(k, v, "a probability")?,
                "max_seq_len" => m.max_seq_len = parse(k, v, "a positive integer")?,
                "seed" => {
                    m.seed = parse(k, v, "an unsigned integer")?;
                    t.seed = m.seed;
                }
                "batch_size" => t.batch_size = parse(k, v, "an integer >= 2")?,
                "total_steps" => t.total_steps = parse(k, v, "a positive integer")?,
                "peak_lr" => t.peak_lr = parse(k, v, "a positive number")?,
                "warmup_steps" => t.warmup_steps = parse(k, v, "an integer")?,
                "weight_decay" => t.weight_decay = parse(k, v, "a non-negative number")?,
                "beta1" => t.beta1 = parse(k, v, "a number in (0, 1)")?,
                "beta2" => t.beta2 = parse(k, v, "a number in (0, 1)")?,
                "adam_eps" => t.adam_eps = parse(k, v, "a positive number")?,
                "log_every" => t.log_every = parse(k, v, "a positive integer")?,
                "checkpoint_every" => t.checkpoint_every = parse(k, v, "an integer")?,
                "grad_clip" => {
                    t.grad_clip = match v.to_ascii_lowercase().as_str() {
                        "none" | "off" => None,
                        _ => Some(parse(k, v, "a positive number or none")?),
                    }
                }
                "max_len" => t.max_len = parse(k, v, "an integer >= 3")?,
                "vocab" => rc.vocab = Some(PathBuf::from(v)),
                "pairs" => rc.pairs = Some(PathBuf::from(v)),
                "synthetic_pairs" => rc.synthetic_pairs = parse(k, v, "a positive integer")?,
                "topics" => rc.topics = parse(k, v, "an integer >= 2")?,
                "out_dir" => rc.out_dir = PathBuf::from(v),
                other => bail!("unknown key {other:?}"),
            }
        }
        Ok(rc)
    }

    /// Configuration errors, including paths that do not exist.
    pub fn validate(&self) -> Result<()> {
        self.model.validate().context("model configuration")?;
        self.train.validate().context("training configuration")?;
        for (key, path) in [("vocab", &self.vocab), ("pairs", &self.pairs)] {
            if let Some(p) = path {
                if !p.exists() {
                    bail!("{key} path {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    /// Fully resolved `key=value` listing, loadable by [`parse_kv`].
    pub fn to_kv(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut lines = vec![
            format!("n_layers={}", m.n_layers),
            format!("n_heads={}", m.n_heads),
            format!("d_model={}", m.d_model),
            format!("ffn_factor={}", m.ffn_factor),
            format!("head_ffn_factor={}", m.head_ffn_factor),
            format!("pool_proj={}", m.pool_proj),
            format!("embedding={}", m.embedding_kind),
            format!("vocab_size={}", m.vocab_size),
            format!("dropout_p={}", m.dropout_p),
            format!("max_seq_len={}", m.max_seq_len),
            format!("seed={}", m.seed),
            format!("batch_size={}", t.batch_size),
            format!("total_steps={}", t.total_steps),
            format!("peak_lr={}", t.peak_lr),
            format!("warmup_steps={}", t.warmup_steps),
            format!("weight_decay={}", t.weight_decay),
            format!("beta1={}", t.beta1),
            format!("beta2={}", t.beta2),
            format!("adam_eps={}", t.adam_eps),
            format!("log_every={}", t.log_every),
            format!("checkpoint_every={}", t.checkpoint_every),
            format!("grad_clip={}", t.grad_clip.map_or("none".to_string(), |c| c.to_string())),
            format!("max_len={}", t.max_len),
            format!("synthetic_pairs={}", self.synthetic_pairs),
            format!("topics={}", self.topics),
            format!("out_dir={}", self.out_dir.display()),
        ];
        if let Some(v) = &self.vocab {
            lines.push(format!("vocab={}", v.display()));
        }
        if let Some(p) = &self.pairs {
            lines.push(format!("pairs={}", p.display()));
        }
        lines.join("\n") + "\n"
    }
}

/// Help text listing every key and its default.
pub fn keys_help() -> String {
    let mut s = String::from("Config keys (file `key=value`, '#' comments; flags override the file):\n");
    for (k, d) in KEYS {
        s.push_str(&format!("  {k:<18} default {d}\n"));
    }
    s
}

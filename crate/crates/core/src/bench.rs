//! Throughput harness for the base embedding: fused single pass, naive
//! two-pass with an intermediate buffer, and a gather from a materialized
//! `V × d` table.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::fourier::{embed_batch_fused, embed_batch_naive, embed_ids_into, EmbeddingConfig, EmbeddingError};
use crate::ids::{TokenGrid, TokenId};

pub const MIN_MEASURED: usize = 10;
pub const MIN_WARMUP: usize = 3;
pub const AGREEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("need at least {MIN_MEASURED} measured iterations, got {0}")]
    TooFewIters(usize),
    #[error("need at least {MIN_WARMUP} warm-up iterations, got {0}")]
    TooFewWarmup(usize),
    #[error("batch shape must be non-empty, got [{0}, {1}]")]
    EmptyBatch(usize, usize),
    #[error("{variant} disagrees with the reference by {max_abs_diff:e} at element {index}")]
    Disagreement {
        variant: &'static str,
        max_abs_diff: f64,
        index: usize,
    },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Fused,
    Naive,
    Table,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Fused => "fused",
            Variant::Naive => "naive",
            Variant::Table => "table",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub variant: Variant,
    /// Median over measured iterations.
    pub tokens_per_second: f64,
    pub mean_tokens_per_second: f64,
    /// Coefficient of variation of per-iteration times.
    pub cv: f64,
    /// Resident lookup table, zero for the computed variants.
    pub bytes_table: usize,
    /// Rough memory traffic per token (reads plus writes).
    pub bytes_touched_per_token: usize,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub timings_seconds: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub batch: usize,
    pub seq: usize,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub seed: u64,
    /// Worker threads per timed iteration; 1 times single-threaded.
    pub threads: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            batch: 32,
            seq: 128,
            warmup_iters: 3,
            measured_iters: 20,
            seed: 0,
            threads: 1,
        }
    }
}

fn max_diff(a: &[f32], b: &[f32]) -> (f64, usize) {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| ((*x as f64 - *y as f64).abs(), i))
        .fold((0.0, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
}

fn check(variant: Variant, reference: &[f32], got: &[f32]) -> Result<()> {
    let (diff, index) = max_diff(reference, got);
    if diff > AGREEMENT_TOL || reference.len() != got.len() {
        return Err(BenchError::Disagreement {
            variant: variant.name(),
            max_abs_diff: diff,
            index,
        });
    }
    Ok(())
}

fn gather(table: &[f32], ids: &[TokenId], d: usize, out: &mut Vec<f32>) {
    for &id in ids {
        let s = id as usize * d;
        out.extend_from_slice(&table[s..s + d]);
    }
}

fn stats(timings: &[f64], tokens: usize) -> (f64, f64, f64) {
    let mut sorted = timings.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    };
    let mean = timings.iter().sum::<f64>() / timings.len() as f64;
    let var = timings.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (timings.len() - 1).max(1) as f64;
    let cv = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
    (tokens as f64 / median.max(1e-12), tokens as f64 / mean.max(1e-12), cv)
}

/// Runs `body` over contiguous id slices on `threads` workers.
fn run_split(ids: &[TokenId], threads: usize, body: &(dyn Fn(&[TokenId]) + Sync)) {
    if threads <= 1 {
        body(ids);
        return;
    }
    let per = ids.len().div_ceil(threads);
    std::thread::scope(|s| {
        for part in ids.chunks(per) {
            s.spawn(move || body(part));
        }
    });
}

/// Times the three variants on one seeded random batch after checking that
/// the fused and table variants reproduce the naive reference within 1e-6.
pub fn bench_embedding(cfg: &EmbeddingConfig, opts: &BenchOptions) -> Result<Vec<BenchResult>> {
    if opts.measured_iters < MIN_MEASURED {
        return Err(BenchError::TooFewIters(opts.measured_iters));
    }
    if opts.warmup_iters < MIN_WARMUP {
        return Err(BenchError::TooFewWarmup(opts.warmup_iters));
    }
    if opts.batch == 0 || opts.seq == 0 {
        return Err(BenchError::EmptyBatch(opts.batch, opts.seq));
    }
    let d = cfg.d_model();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<TokenId> = (0..opts.batch * opts.seq)
        .map(|_| rng.gen_range(0..cfg.vocab_size() as TokenId))
        .collect();
    let grid = TokenGrid::new(opts.batch, opts.seq, ids.clone()).expect("sized grid");

    let naive = embed_batch_naive::<f32>(&grid, cfg)?;
    let fused = embed_batch_fused::<f32>(&grid, cfg)?;
    check(Variant::Fused, naive.data(), fused.data())?;
    let all: Vec<TokenId> = (0..cfg.vocab_size() as TokenId).collect();
    let mut table = Vec::with_capacity(cfg.vocab_size() * d);
    embed_ids_into::<f32>(&all, cfg, &mut table);
    let mut gathered = Vec::with_capacity(ids.len() * d);
    gather(&table, &ids, d, &mut gathered);
    check(Variant::Table, naive.data(), &gathered)?;

    let tokens = ids.len();
    let threads = opts.threads.max(1);
    let fused_body = |part: &[TokenId]| {
        let mut out = Vec::with_capacity(part.len() * d);
        embed_ids_into::<f32>(part, cfg, &mut out);
        black_box(&out);
    };
    let naive_body = |part: &[TokenId]| {
        let g = TokenGrid::new(1, part.len(), part.to_vec()).expect("sized grid");
        black_box(embed_batch_naive::<f32>(&g, cfg).expect("ids checked"));
    };
    let table_ref = &table;
    let table_body = |part: &[TokenId]| {
        let mut out = Vec::with_capacity(part.len() * d);
        gather(table_ref, part, d, &mut out);
        black_box(&out);
    };
    let variants: [(Variant, &(dyn Fn(&[TokenId]) + Sync), usize, usize); 3] = [
        (Variant::Fused, &fused_body, 0, 4 + 4 * d),
        (Variant::Naive, &naive_body, 0, 4 + 2 * 8 + 4 * d),
        (Variant::Table, &table_body, cfg.table_bytes::<f32>(), 4 + 8 * d),
    ];

    let mut results = Vec::with_capacity(3);
    for (variant, body, bytes_table, touched) in variants {
        for _ in 0..opts.warmup_iters {
            run_split(&ids, threads, body);
        }
        let timings: Vec<f64> = (0..opts.measured_iters)
            .map(|_| {
                let t = Instant::now();
                run_split(&ids, threads, body);
                t.elapsed().as_secs_f64()
            })
            .collect();
        let (median_tps, mean_tps, cv) = stats(&timings, tokens);
        results.push(BenchResult {
            variant,
            tokens_per_second: median_tps,
            mean_tokens_per_second: mean_tps,
            cv,
            bytes_table,
            bytes_touched_per_token: touched,
            warmup_iters: opts.warmup_iters,
            measured_iters: opts.measured_iters,
            timings_seconds: timings,
        });
    }
    Ok(results)
}

pub const CSV_HEADER: &str = "variant,tokens_per_second,cv,bytes_table";

pub fn results_csv(results: &[BenchResult]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in results {
        out.push_str(&format!(
            "{},{:.1},{:.4},{}\n",
            r.variant.name(),
            r.tokens_per_second,
            r.cv,
            r.bytes_table
        ));
    }
    out
}

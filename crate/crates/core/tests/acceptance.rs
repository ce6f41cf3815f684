//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Built with `harness = false` so the summary is
//! always visible under `cargo test`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pete_core::bench::{bench_embedding, BenchOptions, Variant};
use pete_core::checkpoint::save_checkpoint;
use pete_core::data::{make_batches, synth_pairs, SentencePair, Vocab};
use pete_core::eval::{evaluate_sts, pearson, spearman, EvalOptions};
use pete_core::fourier::{basis_gram, embed_batch_fused, embed_batch_naive, EmbeddingConfig};
use pete_core::model::{
    attention_block, embedding_forward, encode, geglu_ffn, param_count, AttentionParams, Bound, EmbeddingKind,
    FfnFactor, FfnParams, Model, ModelConfig, ModelError,
};
use pete_core::tensor::{grad_check_many, Graph, Tensor, TensorError, Var};
use pete_core::training::{info_nce_loss, retrieval_accuracy, smoothed_tail, train_loop, TrainConfig, TrainOutputs};
use pete_core::TokenGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(elapsed: Duration, budget_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < budget_s, || {
        format!("took {:.2}s, budget {budget_s}s", elapsed.as_secs_f64())
    })
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_f64(shape.to_vec(), &data).unwrap()
}

// 1 ---------------------------------------------------------------------------

fn fourier_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_comp, mut worst_comp32, mut worst_norm) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let v = rng.gen_range(2..=100_000usize);
        let d = 2 * rng.gen_range(1..=256usize);
        let p = rng.gen_range(0..v) as u32;
        let cfg = EmbeddingConfig::new(v, d).map_err(|e| e.to_string())?;
        let grid = TokenGrid::new(1, 1, vec![p]).unwrap();
        let got = embed_batch_fused::<f64>(&grid, &cfg).map_err(|e| e.to_string())?;
        let got32 = embed_batch_fused::<f32>(&grid, &cfg).map_err(|e| e.to_string())?;
        let x = 2.0 * p as f64 / (v - 1) as f64 - 1.0;
        for i in 0..d {
            let arg = ((i / 2) + 1) as f64 * PI * x;
            let want = if i % 2 == 0 { arg.sin() } else { arg.cos() };
            worst_comp = worst_comp.max((got.data()[i] - want).abs());
            worst_comp32 = worst_comp32.max((got32.data()[i] as f64 - want).abs());
        }
        let norm2: f64 = got.data().iter().map(|t| t * t).sum();
        worst_norm = worst_norm.max((norm2 - d as f64 / 2.0).abs());
    }
    ensure(worst_comp <= 1e-6 && worst_comp32 <= 1e-6, || {
        format!("component error f64 {worst_comp:e}, f32 {worst_comp32:e}")
    })?;
    ensure(worst_norm <= 1e-5, || format!("squared-norm error {worst_norm:e}"))?;
    within_budget(start.elapsed(), 5.0)?;
    Ok(format!(
        "max component err {worst_comp:.1e} (f32 {worst_comp32:.1e}), max |‖T‖²−d/2| {worst_norm:.1e}"
    ))
}

// 2 ---------------------------------------------------------------------------

fn basis_orthogonality() -> Outcome {
    let start = Instant::now();
    let d = 64;
    let gram = basis_gram(d, 100_000).map_err(|e| e.to_string())?;
    let mut worst_off = 0.0f64;
    let mut worst_diag = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let g = gram[i * d + j];
            if i == j {
                worst_diag = worst_diag.max((g - 1.0).abs());
            } else {
                worst_off = worst_off.max(g.abs());
            }
        }
    }
    ensure(worst_off <= 5e-3, || format!("off-diagonal {worst_off:e}"))?;
    within_budget(start.elapsed(), 10.0)?;
    Ok(format!("max |off-diagonal| {worst_off:.1e}, max |diag−1| {worst_diag:.1e}"))
}

// 3 ---------------------------------------------------------------------------

const SEEDS: u64 = 20;
const GRAD_TOL: f64 = 1e-3;
const H: f64 = 1e-6;

/// Reduces any tensor to a scalar through fixed random weights so that every
/// output coordinate contributes a distinct gradient.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = g.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = g.constant(random_tensor(&mut rng, &shape, -1.0, 1.0));
    let prod = g.mul(y, w)?;
    g.sum_all(prod)
}

type OpCase = (&'static str, Vec<Vec<usize>>, (f64, f64), fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>);

fn op_cases() -> Vec<OpCase> {
    vec![
        ("add", vec![vec![2, 3, 4], vec![3, 4]], (-1.0, 1.0), |g, v| g.add(v[0], v[1])),
        ("sub", vec![vec![2, 3, 4], vec![4]], (-1.0, 1.0), |g, v| g.sub(v[0], v[1])),
        ("mul", vec![vec![2, 3, 4], vec![3, 4]], (-1.0, 1.0), |g, v| g.mul(v[0], v[1])),
        ("scale", vec![vec![3, 4]], (-1.0, 1.0), |g, v| g.scale(v[0], 1.7)),
        ("add_scalar", vec![vec![3, 4]], (-1.0, 1.0), |g, v| g.add_scalar(v[0], -0.3)),
        ("sin", vec![vec![3, 4]], (-3.0, 3.0), |g, v| g.sin(v[0])),
        ("cos", vec![vec![3, 4]], (-3.0, 3.0), |g, v| g.cos(v[0])),
        ("exp", vec![vec![3, 4]], (-2.0, 2.0), |g, v| g.exp(v[0])),
        ("log", vec![vec![3, 4]], (0.5, 3.0), |g, v| g.log(v[0])),
        ("gelu", vec![vec![3, 4]], (-3.0, 3.0), |g, v| g.gelu(v[0])),
        ("rsqrt", vec![vec![3, 4]], (0.5, 3.0), |g, v| g.rsqrt(v[0])),
        ("matmul", vec![vec![3, 4], vec![4, 5]], (-1.0, 1.0), |g, v| g.matmul(v[0], v[1])),
        ("matmul_batched", vec![vec![2, 3, 4], vec![4, 2]], (-1.0, 1.0), |g, v| g.matmul(v[0], v[1])),
        ("matmul_heads", vec![vec![2, 2, 3, 4], vec![2, 2, 4, 3]], (-1.0, 1.0), |g, v| g.matmul(v[0], v[1])),
        ("sum_axis", vec![vec![2, 3, 4]], (-1.0, 1.0), |g, v| g.sum_axis(v[0], 1)),
        ("mean_axis", vec![vec![2, 3, 4]], (-1.0, 1.0), |g, v| g.mean_axis(v[0], 2)),
        ("sum_all", vec![vec![2, 3]], (-1.0, 1.0), |g, v| g.sum_all(v[0])),
        ("softmax", vec![vec![3, 5]], (-2.0, 2.0), |g, v| g.softmax(v[0])),
        ("log_softmax", vec![vec![3, 5]], (-2.0, 2.0), |g, v| g.log_softmax(v[0])),
        ("permute", vec![vec![2, 3, 4]], (-1.0, 1.0), |g, v| g.permute(v[0], &[2, 0, 1])),
        ("transpose", vec![vec![3, 4]], (-1.0, 1.0), |g, v| g.transpose(v[0])),
        ("reshape", vec![vec![2, 6]], (-1.0, 1.0), |g, v| g.reshape(v[0], &[3, 4])),
        ("concat_last", vec![vec![2, 3], vec![2, 2]], (-1.0, 1.0), |g, v| g.concat_last(&[v[0], v[1]])),
        ("split_last", vec![vec![2, 5]], (-1.0, 1.0), |g, v| {
            let parts = g.split_last(v[0], &[2, 3])?;
            let a = g.sum_all(parts[0])?;
            let b = g.scale(parts[1], 2.0)?;
            let b = g.sum_all(b)?;
            let prod = g.mul(a, b)?;
            Ok(prod)
        }),
        ("l2_normalize", vec![vec![3, 4]], (0.2, 1.0), |g, v| g.l2_normalize(v[0])),
        ("masked_fill", vec![vec![2, 3]], (-1.0, 1.0), |g, v| {
            g.masked_fill(v[0], &[true, false, false, true, false, true], -5.0)
        }),
        ("scale_rows", vec![vec![2, 3, 4], vec![2, 3]], (-1.0, 1.0), |g, v| g.scale_rows(v[0], v[1])),
        ("gather_rows", vec![vec![5, 3]], (-1.0, 1.0), |g, v| g.gather_rows(v[0], &[4, 0, 4, 2], &[2, 2])),
        ("rotary", vec![vec![2, 3, 4]], (-1.0, 1.0), |g, v| g.rotary(v[0], &[0, 5, 17], 10000.0)),
    ]
}

fn check_ops() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (name, shapes, (lo, hi), op) in op_cases() {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(&mut rng, s, lo, hi)).collect();
            let err = grad_check_many(
                |g, v| {
                    let y = op(g, v)?;
                    if g.shape(y).is_empty() {
                        Ok(y)
                    } else {
                        weighted_sum(g, y, seed)
                    }
                },
                &inputs,
                H,
            )
            .map_err(|e| format!("{name}: {e}"))?;
            ensure(err < GRAD_TOL, || format!("{name} seed {seed}: relative error {err:e}"))?;
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn tiny_model(kind: EmbeddingKind, seed: u64) -> Model<f64> {
    let cfg = ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 8,
        ffn_factor: FfnFactor::new(2, 1).unwrap(),
        head_ffn_factor: FfnFactor::new(1, 2).unwrap(),
        pool_proj: true,
        embedding_kind: kind,
        vocab_size: 40,
        dropout_p: 0.0,
        max_seq_len: 8,
        seed,
    };
    let mut m = Model::<f64>::build(cfg).unwrap();
    // Random non-unit gains and larger weights make every path contribute.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for p in m.params_mut().iter_mut() {
        for v in p.tensor.data_mut() {
            *v = if p.name.ends_with("norm") {
                rng.gen_range(0.5..1.5)
            } else if p.name == "logit_scale" {
                *v
            } else {
                rng.gen_range(-0.5..0.5)
            };
        }
    }
    m
}

fn check_fourier_head() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let model = tiny_model(EmbeddingKind::Fourier, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<u32> = (0..6).map(|_| rng.gen_range(0..40)).collect();
        let grid = TokenGrid::new(2, 3, ids).unwrap();
        let inputs: Vec<Tensor<f64>> = model.params().iter().map(|p| p.tensor.clone()).collect();
        let err = grad_check_many(
            |g, vars| -> Result<Var, ModelError> {
                let bound = Bound::from_vars(vars.to_vec());
                let y = embedding_forward(g, &model, &bound, &grid)?;
                Ok(weighted_sum(g, y, seed)?)
            },
            &inputs,
            H,
        )
        .map_err(|e| e.to_string())?;
        ensure(err < GRAD_TOL, || format!("fourier head seed {seed}: {err:e}"))?;
        worst = worst.max(err);

        // The whole encoder through the same parameters, pooled output.
        let mask = vec![1, 1, 0, 1, 1, 1];
        let err = grad_check_many(
            |g, vars| -> Result<Var, ModelError> {
                let bound = Bound::from_vars(vars.to_vec());
                let y = encode(g, &model, &bound, &grid, &mask, None)?;
                Ok(weighted_sum(g, y, seed)?)
            },
            &inputs,
            H,
        )
        .map_err(|e| e.to_string())?;
        ensure(err < GRAD_TOL, || format!("full encoder seed {seed}: {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_encoder_block() -> Result<f64, String> {
    let (b, s, d, hidden, heads) = (2, 3, 8, 12, 2);
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = vec![random_tensor(&mut rng, &[b, s, d], -1.0, 1.0)];
        inputs.push(random_tensor(&mut rng, &[d], 0.5, 1.5));
        for _ in 0..4 {
            inputs.push(random_tensor(&mut rng, &[d, d], -0.5, 0.5));
        }
        inputs.push(random_tensor(&mut rng, &[d], 0.5, 1.5));
        inputs.push(random_tensor(&mut rng, &[d, hidden], -0.5, 0.5));
        inputs.push(random_tensor(&mut rng, &[d, hidden], -0.5, 0.5));
        inputs.push(random_tensor(&mut rng, &[hidden, d], -0.5, 0.5));
        let mask = [1u8, 1, 1, 1, 0, 0];
        let err = grad_check_many(
            |g, v| -> Result<Var, ModelError> {
                let attn = AttentionParams {
                    norm: v[1],
                    wq: v[2],
                    wk: v[3],
                    wv: v[4],
                    wo: v[5],
                    n_heads: heads,
                };
                let ffn = FfnParams {
                    norm: v[6],
                    w_a: v[7],
                    w_b: v[8],
                    w_out: v[9],
                };
                let x = attention_block(g, v[0], &mask, &attn, &mut None)?;
                let y = geglu_ffn(g, x, &ffn, &mut None)?;
                Ok(weighted_sum(g, y, seed)?)
            },
            &inputs,
            H,
        )
        .map_err(|e| e.to_string())?;
        ensure(err < GRAD_TOL, || format!("encoder block seed {seed}: {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_info_nce() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=5);
        let d = rng.gen_range(2..=6);
        let inputs = vec![
            random_tensor(&mut rng, &[n, d], -1.0, 1.0),
            random_tensor(&mut rng, &[n, d], -1.0, 1.0),
            Tensor::scalar(rng.gen_range(0.0..3.0)),
        ];
        let err = grad_check_many(|g, v| info_nce_loss(g, v[0], v[1], v[2]), &inputs, H).map_err(|e| e.to_string())?;
        ensure(err < GRAD_TOL, || format!("info_nce seed {seed}: {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let ops = check_ops()?;
    let head = check_fourier_head()?;
    let block = check_encoder_block()?;
    let nce = check_info_nce()?;
    within_budget(start.elapsed(), 60.0)?;
    Ok(format!(
        "{} ops, head+encoder, block, info_nce x {SEEDS} seeds; worst rel err ops {ops:.1e}, head {head:.1e}, block {block:.1e}, loss {nce:.1e}",
        op_cases().len()
    ))
}

// 4 ---------------------------------------------------------------------------

fn parameter_accounting() -> Outcome {
    // (layers, d, fourier figure, learned figure) in millions, as published.
    let rows = [(1, 256, 1.1, 8.9), (1, 512, 4.7, 20.1), (2, 256, 2.2, 9.9), (2, 512, 8.9, 24.3)];
    let mut lines = Vec::new();
    for (layers, d, fourier_m, learned_m) in rows {
        let cfg = |kind| ModelConfig {
            n_layers: layers,
            n_heads: layers,
            d_model: d,
            embedding_kind: kind,
            vocab_size: 30522,
            ..ModelConfig::default()
        };
        let f = param_count(&cfg(EmbeddingKind::Fourier));
        let l = param_count(&cfg(EmbeddingKind::Learned));
        let (fm, lm) = (f.total as f64 / 1e6, l.total as f64 / 1e6);
        ensure((fm - fourier_m).abs() <= 0.1 + 1e-9, || {
            format!("fourier {layers}x{d}: {fm:.3}m vs {fourier_m}m")
        })?;
        ensure((lm - learned_m).abs() <= 0.1 + 1e-9, || {
            format!("learned {layers}x{d}: {lm:.3}m vs {learned_m}m")
        })?;
        ensure(l.embedding_table == 30522 * d, || format!("table term {}", l.embedding_table))?;
        let diff = l.total - f.total;
        ensure(l.embedding_table as f64 / diff as f64 > 0.9, || {
            format!("table is only {} of a {diff} difference", l.embedding_table)
        })?;
        lines.push(format!("{layers}x{d} {fm:.3}m/{lm:.3}m"));
    }
    let t = param_count(&ModelConfig {
        embedding_kind: EmbeddingKind::Learned,
        ..ModelConfig::default()
    })
    .embedding_table;
    ensure(t == 7_813_632, || format!("1x256 table term {t}"))?;
    Ok(format!("{}; table term 7,813,632", lines.join(", ")))
}

// 5 ---------------------------------------------------------------------------

fn residual_identity() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let cfg = ModelConfig {
            d_model: 64,
            vocab_size: 30522,
            seed,
            ..ModelConfig::default()
        };
        let mut model = Model::<f32>::build(cfg).map_err(|e| e.to_string())?;
        let w_out = model
            .params_mut()
            .by_name_mut("embed.head.w_out")
            .ok_or("no head output projection")?;
        w_out.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<u32> = (0..4 * 16).map(|_| rng.gen_range(0..30522)).collect();
        let grid = TokenGrid::new(4, 16, ids).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let e = embedding_forward(&mut g, &model, &bound, &grid).map_err(|e| e.to_string())?;
        let ecfg = EmbeddingConfig::new(30522, 64).unwrap();
        let base = embed_batch_fused::<f32>(&grid, &ecfg).map_err(|e| e.to_string())?;
        for (a, b) in g.data(e).iter().zip(base.data()) {
            worst = worst.max((a - b).abs() as f64);
        }
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!("max |E − T| {worst:.1e} over 5 seeds"))
}

// 6 and 7 ----------------------------------------------------------------------

struct DeskRun {
    initial: f64,
    smoothed: f64,
    accuracy: f64,
    seconds: f64,
}

const DESK_V: usize = 2048;

fn desk_setup() -> (Vocab, Vec<SentencePair>) {
    let vocab = Vocab::synthetic(DESK_V).unwrap();
    let pairs = synth_pairs(2048, &vocab, 0, 4).unwrap();
    (vocab, pairs)
}

fn desk_train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        total_steps: 300,
        peak_lr: 1e-3,
        warmup_steps: 30,
        max_len: 32,
        log_every: 50,
        ..TrainConfig::default()
    }
}

fn desk_run(kind: EmbeddingKind, dropout: f64, vocab: &Vocab, pairs: &[SentencePair]) -> Result<DeskRun, String> {
    let cfg = ModelConfig {
        n_layers: 1,
        n_heads: 1,
        d_model: 64,
        embedding_kind: kind,
        vocab_size: DESK_V,
        dropout_p: dropout,
        max_seq_len: 32,
        seed: 0,
        ..ModelConfig::default()
    };
    let model = Model::<f32>::build(cfg).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = train_loop(model, pairs, vocab, &desk_train_config(), &TrainOutputs::default()).map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();
    let accuracy = retrieval_accuracy(&out.model, pairs, vocab, 32, 32, 99).map_err(|e| e.to_string())?;
    Ok(DeskRun {
        initial: out.losses[0],
        smoothed: smoothed_tail(&out.losses, 20),
        accuracy,
        seconds,
    })
}

fn desk_learning(fourier: &Result<DeskRun, String>, learned: &Result<DeskRun, String>) -> Outcome {
    let mut parts = Vec::new();
    for (name, run) in [("fourier", fourier), ("learned", learned)] {
        let r = run.as_ref().map_err(|e| format!("{name}: {e}"))?;
        ensure(r.smoothed < 0.5 * r.initial, || {
            format!("{name}: smoothed loss {:.4} not below half of {:.4}", r.smoothed, r.initial)
        })?;
        ensure(r.accuracy >= 0.9, || format!("{name}: retrieval accuracy {:.3}", r.accuracy))?;
        ensure(r.seconds < 300.0, || format!("{name}: {:.0}s", r.seconds))?;
        parts.push(format!(
            "{name} loss {:.3}->{:.3} acc {:.3} ({:.0}s)",
            r.initial, r.smoothed, r.accuracy, r.seconds
        ));
    }
    Ok(parts.join("; "))
}

fn comparative(fourier: &Result<DeskRun, String>, learned: &Result<DeskRun, String>) -> Outcome {
    let f = fourier.as_ref().map_err(|e| format!("fourier: {e}"))?;
    let l = learned.as_ref().map_err(|e| format!("learned: {e}"))?;
    let gap = (l.accuracy - f.accuracy) * 100.0;
    ensure(gap <= 10.0, || format!("fourier {:.3} trails learned {:.3}", f.accuracy, l.accuracy))?;
    Ok(format!("fourier {:.3} vs learned {:.3} (gap {gap:.1} pp)", f.accuracy, l.accuracy))
}

// 8 ---------------------------------------------------------------------------

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Rank by counting: strictly smaller values plus the midpoint of the tie
/// group, 1-based.
fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn eval_statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut wp, mut ws) = (0.0f64, 0.0f64);
    let mut series = 0;
    while series < 100 {
        let n = rng.gen_range(3..=50);
        // Coarse grids force ties in both series.
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 * 0.5).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 + rng.gen_range(0..2) as f64 * 0.25).collect();
        let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
        if constant(&x) || constant(&y) {
            continue;
        }
        series += 1;
        let p = pearson(&x, &y).map_err(|e| e.to_string())?;
        let s = spearman(&x, &y).map_err(|e| e.to_string())?;
        wp = wp.max((p - oracle_pearson(&x, &y)).abs());
        ws = ws.max((s - oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y))).abs());
    }
    ensure(wp <= 1e-9 && ws <= 1e-9, || format!("pearson err {wp:e}, spearman err {ws:e}"))?;

    // Batching invariance through a real encoder.
    let vocab = Vocab::synthetic(300).unwrap();
    let mut pairs = synth_pairs(40, &vocab, 3, 4).map_err(|e| e.to_string())?;
    for (i, p) in pairs.iter_mut().enumerate() {
        p.score = Some((i * 7 % 11) as f64 * 0.45);
    }
    let model = Model::<f32>::build(ModelConfig {
        d_model: 32,
        vocab_size: 300,
        max_seq_len: 32,
        ..ModelConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let run = |batch_size, threads| {
        evaluate_sts(&model, &pairs, &vocab, EvalOptions { batch_size, max_len: 32, threads }).map_err(|e| e.to_string())
    };
    let reference = run(40, 1)?;
    let mut worst = 0.0f64;
    for (bs, threads) in [(1, 1), (3, 1), (7, 2), (16, 4)] {
        let r = run(bs, threads)?;
        for (a, b) in r.records.iter().zip(&reference.records) {
            worst = worst.max((a.cosine - b.cosine).abs());
        }
        worst = worst.max((r.spearman - reference.spearman).abs());
        worst = worst.max((r.pearson - reference.pearson).abs());
    }
    ensure(worst <= 1e-5, || format!("batching changed results by {worst:e}"))?;
    Ok(format!(
        "pearson err {wp:.1e}, spearman err {ws:.1e} over 100 tied series; batching drift {worst:.1e}"
    ))
}

// 9 ---------------------------------------------------------------------------

fn bench_gate() -> Outcome {
    let (v, d) = (5000, 64);
    let cfg = EmbeddingConfig::new(v, d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ids: Vec<u32> = (0..8 * 64).map(|_| rng.gen_range(0..v as u32)).collect();
    let grid = TokenGrid::new(8, 64, ids).unwrap();
    let fused = embed_batch_fused::<f32>(&grid, &cfg).map_err(|e| e.to_string())?;
    let naive = embed_batch_naive::<f32>(&grid, &cfg).map_err(|e| e.to_string())?;
    let diff = fused
        .data()
        .iter()
        .zip(naive.data())
        .map(|(a, b)| (a - b).abs() as f64)
        .fold(0.0, f64::max);
    ensure(diff <= 1e-6, || format!("fused vs naive {diff:e}"))?;
    let opts = BenchOptions {
        batch: 4,
        seq: 32,
        warmup_iters: 3,
        measured_iters: 10,
        seed: 9,
        threads: 1,
    };
    let results = bench_embedding(&cfg, &opts).map_err(|e| e.to_string())?;
    let table = results.iter().find(|r| r.variant == Variant::Table).ok_or("no table result")?;
    ensure(table.bytes_table == v * d * 4, || format!("table bytes {}", table.bytes_table))?;
    let bert = EmbeddingConfig::new(30522, 256).unwrap().table_bytes::<f32>();
    ensure(bert == 30522 * 256 * 4, || format!("bert table bytes {bert}"))?;
    Ok(format!(
        "fused vs naive {diff:.1e}; table {} bytes (V·d·4); 30522x256 -> {bert} bytes",
        table.bytes_table
    ))
}

// 10 --------------------------------------------------------------------------

fn determinism() -> Outcome {
    let vocab = Vocab::synthetic(500).unwrap();
    let pairs = synth_pairs(256, &vocab, 5, 4).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (kind, dropout) in [(EmbeddingKind::Fourier, 0.0), (EmbeddingKind::Learned, 0.1)] {
        let mut runs = Vec::new();
        for run in 0..2 {
            let dir = tmp.path().join(format!("{kind}-{run}"));
            let cfg = ModelConfig {
                d_model: 32,
                n_heads: 2,
                embedding_kind: kind,
                vocab_size: 500,
                dropout_p: dropout,
                max_seq_len: 24,
                seed: 11,
                ..ModelConfig::default()
            };
            let train = TrainConfig {
                batch_size: 16,
                total_steps: 40,
                peak_lr: 1e-3,
                warmup_steps: 5,
                max_len: 24,
                log_every: 5,
                checkpoint_every: 20,
                seed: 11,
                ..TrainConfig::default()
            };
            let outputs = TrainOutputs {
                checkpoint_dir: Some(dir.join("ckpt")),
                metrics_csv: Some(dir.join("metrics.csv")),
            };
            let model = Model::<f32>::build(cfg).map_err(|e| e.to_string())?;
            let out = train_loop(model, &pairs, &vocab, &train, &outputs).map_err(|e| e.to_string())?;
            save_checkpoint(&out.model, &dir.join("final.ckpt")).map_err(|e| e.to_string())?;
            let mut files: Vec<Vec<u8>> = out
                .checkpoints
                .iter()
                .map(|p| std::fs::read(p).map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?;
            files.push(std::fs::read(dir.join("final.ckpt")).map_err(|e| e.to_string())?);
            // Wall-clock time is the only column allowed to differ.
            let metrics = std::fs::read_to_string(dir.join("metrics.csv")).map_err(|e| e.to_string())?;
            let log: Vec<String> = metrics
                .lines()
                .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
                .collect();
            runs.push((files, log, out.losses));
        }
        let (a, b) = (&runs[0], &runs[1]);
        ensure(a.0.len() == 3 && a.0 == b.0, || format!("{kind}: checkpoints differ"))?;
        ensure(a.1.len() > 2 && a.1 == b.1, || format!("{kind}: metric logs differ"))?;
        let same_losses = a.2.iter().zip(&b.2).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same_losses, || format!("{kind}: per-step losses differ"))?;
        checked += a.0.len();
    }
    // Batch order is a pure function of the seed.
    let order = |seed| {
        make_batches(&pairs, 16, 24, &vocab, seed)
            .map(|bs| bs.iter().map(|b| b.ids_a.ids().to_vec()).collect::<Vec<_>>())
            .map_err(|e| e.to_string())
    };
    ensure(order(3)? == order(3)?, || "batch order differs".into())?;
    Ok(format!("{checked} checkpoint files and metric logs bitwise identical (fourier, learned+dropout)"))
}

// -----------------------------------------------------------------------------

fn report(n: usize, name: &str, outcome: Outcome, elapsed: Duration) -> bool {
    let secs = elapsed.as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("criterion {n:>2} PASS  {name} [{secs:.1}s]: {detail}");
            true
        }
        Err(why) => {
            println!("criterion {n:>2} FAIL  {name} [{secs:.1}s]: {why}");
            false
        }
    }
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn main() -> ExitCode {
    // `cargo test -- --list` and similar harness queries: nothing to list.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    println!("acceptance suite");
    let mut ok = true;
    let quick: [(usize, &str, fn() -> Outcome); 5] = [
        (1, "fourier formula fidelity", fourier_fidelity),
        (2, "basis orthogonality", basis_orthogonality),
        (3, "gradient correctness", gradient_correctness),
        (4, "parameter accounting", parameter_accounting),
        (5, "residual identity", residual_identity),
    ];
    for (n, name, f) in quick {
        let (out, t) = timed(f);
        ok &= report(n, name, out, t);
    }

    let (vocab, pairs) = desk_setup();
    let start = Instant::now();
    let fourier = desk_run(EmbeddingKind::Fourier, 0.0, &vocab, &pairs);
    let learned = desk_run(EmbeddingKind::Learned, 0.1, &vocab, &pairs);
    let desk_time = start.elapsed();
    ok &= report(6, "desk-scale learning signal", desk_learning(&fourier, &learned), desk_time);
    ok &= report(7, "fourier vs learned retrieval", comparative(&fourier, &learned), Duration::ZERO);

    let rest: [(usize, &str, fn() -> Outcome); 3] = [
        (8, "evaluation statistics", eval_statistics),
        (9, "bench correctness gate", bench_gate),
        (10, "determinism", determinism),
    ];
    for (n, name, f) in rest {
        let (out, t) = timed(f);
        ok &= report(n, name, out, t);
    }
    if ok {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}

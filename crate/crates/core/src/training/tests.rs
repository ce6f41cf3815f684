use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{synth_pairs, Vocab};
use crate::model::{EmbeddingKind, Model, ModelConfig, ParamStore};
use crate::tensor::{grad_check_many, Graph, Tensor};

fn loss_of(a: &[f64], b: &[f64], n: usize, d: usize, ls: f64) -> Result<f64> {
    let mut g = Graph::new();
    let av = g.constant(Tensor::from_f64([n, d], a).unwrap());
    let bv = g.constant(Tensor::from_f64([n, d], b).unwrap());
    let lv = g.constant(Tensor::scalar(ls));
    let l = info_nce_loss(&mut g, av, bv, lv)?;
    Ok(g.value(l).item().unwrap())
}

/// Independent evaluation with explicit loops over the similarity matrix.
fn brute_loss(a: &[f64], b: &[f64], n: usize, d: usize, ls: f64) -> f64 {
    let unit = |x: &[f64]| {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter().map(|v| v / norm).collect::<Vec<_>>()
    };
    let ar: Vec<Vec<f64>> = a.chunks(d).map(unit).collect();
    let br: Vec<Vec<f64>> = b.chunks(d).map(unit).collect();
    let s = |i: usize, j: usize| ls.exp() * ar[i].iter().zip(&br[j]).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| s(i, j).exp()).sum();
        let col: f64 = (0..n).map(|j| s(j, i).exp()).sum();
        total += -(s(i, i).exp() / row).ln() - (s(i, i).exp() / col).ln();
    }
    total / (2.0 * n as f64)
}

#[test]
fn uniform_logits_give_log_two() {
    let a = [1.0, 0.0, 0.0, 1.0];
    let l = loss_of(&a, &a, 2, 2, -60.0).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-9);
}

#[test]
fn orthonormal_pairs() {
    let a = [1.0, 0.0, 0.0, 1.0];
    let l = loss_of(&a, &a, 2, 2, 0.0).unwrap();
    let want = -(std::f64::consts::E / (std::f64::consts::E + 1.0)).ln();
    assert!((l - want).abs() < 1e-12);
    assert!((l - 0.313262).abs() < 1e-6);
    let swapped = loss_of(&a, &[0.0, 1.0, 1.0, 0.0], 2, 2, 0.0).unwrap();
    assert!(swapped > l);
}

#[test]
fn loss_errors() {
    assert!(matches!(loss_of(&[1.0, 2.0], &[1.0, 2.0], 1, 2, 0.0), Err(TrainError::InvalidInput(_))));
    assert!(loss_of(&[0.0, 0.0, 1.0, 0.0], &[1.0, 0.0, 0.0, 1.0], 2, 2, 0.0).is_err());
}

#[test]
fn loss_matches_brute_force_and_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let n = rng.gen_range(2..7);
        let d = rng.gen_range(2..6);
        let a: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ls = rng.gen_range(-1.0..3.0);
        let l = loss_of(&a, &b, n, d, ls).unwrap();
        assert!(l >= 0.0);
        assert!((l - brute_loss(&a, &b, n, d, ls)).abs() < 1e-10, "trial {trial}");
        let uniform = loss_of(&a, &b, n, d, -80.0).unwrap();
        assert!((uniform - (n as f64).ln()).abs() < 1e-9);

        // A common rotation in the (0, 1) plane.
        let th: f64 = rng.gen_range(0.0..6.0);
        let rot = |x: &[f64]| {
            let mut y = x.to_vec();
            for row in y.chunks_mut(d) {
                let (p, q) = (row[0], row[1]);
                row[0] = p * th.cos() - q * th.sin();
                row[1] = p * th.sin() + q * th.cos();
            }
            y
        };
        let lr = loss_of(&rot(&a), &rot(&b), n, d, ls).unwrap();
        assert!((lr - l).abs() < 1e-5);
    }
}

#[test]
fn loss_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let a = Tensor::from_f64([3, 4], &(0..12).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
        let b = Tensor::from_f64([3, 4], &(0..12).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
        let ls = Tensor::scalar(rng.gen_range(0.0..2.0));
        let err = grad_check_many(|g, v| info_nce_loss(g, v[0], v[1], v[2]), &[a, b, ls], 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }
}

fn scalar_store(value: f64, decay: bool) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.push("w", Tensor::scalar(value), decay);
    s
}

#[test]
fn adamw_examples() {
    let no_decay = AdamConfig {
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut p = scalar_store(0.5, true);
    let mut opt = AdamW::new(no_decay, &p);
    opt.step(&mut p, &[vec![0.0]], 1e-3).unwrap();
    assert_eq!(p.get(0).tensor.data()[0], 0.5);

    let mut p = scalar_store(0.0, true);
    let mut opt = AdamW::new(no_decay, &p);
    opt.step(&mut p, &[vec![1.0]], 1e-3).unwrap();
    let delta = p.get(0).tensor.data()[0];
    assert!((delta - (-1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
    assert!((delta - (-9.99e-4)).abs() < 1.5e-6);

    let mut p = scalar_store(2.0, true);
    let mut opt = AdamW::new(AdamConfig::default(), &p);
    opt.step(&mut p, &[vec![0.0]], 0.1).unwrap();
    assert!((p.get(0).tensor.data()[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);

    let mut p = scalar_store(2.0, false);
    let mut opt = AdamW::new(AdamConfig::default(), &p);
    opt.step(&mut p, &[vec![0.0]], 0.1).unwrap();
    assert_eq!(p.get(0).tensor.data()[0], 2.0);
}

#[test]
fn adamw_rejects_nan_and_names_parameter() {
    let mut p = scalar_store(1.0, true);
    let mut opt = AdamW::new(AdamConfig::default(), &p);
    let err = opt.step(&mut p, &[vec![f64::NAN]], 1e-3).unwrap_err();
    assert_eq!(
        err,
        TrainError::NonFiniteGradient {
            param: "w".into(),
            index: 0
        }
    );
    assert_eq!(p.get(0).tensor.data()[0], 1.0);
    assert_eq!(opt.steps_taken(), 0);
}

#[test]
fn adamw_without_decay_is_adam_on_quadratic() {
    // Reference Adam written out directly: f(x) = (x - 3)^2.
    let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
    let (mut x, mut m, mut v) = (0.0f64, 0.0, 0.0);
    let mut p = scalar_store(0.0, true);
    let mut opt = AdamW::new(
        AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        },
        &p,
    );
    for t in 1..=100 {
        let g = 2.0 * (x - 3.0);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        x -= lr * mh / (vh.sqrt() + eps);

        let w = p.get(0).tensor.data()[0];
        opt.step(&mut p, &[vec![2.0 * (w - 3.0)]], lr).unwrap();
        assert!((p.get(0).tensor.data()[0] - x).abs() < 1e-12, "step {t}");
    }
    assert!((x - 3.0).abs() < 1.0);
}

#[test]
fn schedule_examples() {
    let cfg = TrainConfig {
        peak_lr: 1e-3,
        warmup_steps: 100,
        total_steps: 500,
        ..Default::default()
    };
    assert_eq!(lr_schedule(0, &cfg), 0.0);
    assert_eq!(lr_schedule(100, &cfg), 1e-3);
    assert!((lr_schedule(50, &cfg) - 5e-4).abs() < 1e-18);
    assert_eq!(lr_schedule(400, &cfg), 1e-3);
    let none = TrainConfig {
        warmup_steps: 0,
        ..cfg
    };
    assert_eq!(lr_schedule(0, &none), 1e-3);
}

#[test]
fn clipping() {
    let mut g = vec![vec![3.0f64], vec![4.0]];
    let n = clip_grad_norm(&mut g, 1.0);
    assert_eq!(n, 5.0);
    assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    let mut small = vec![vec![0.1f64]];
    clip_grad_norm(&mut small, 1.0);
    assert_eq!(small[0][0], 0.1);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = [
        TrainConfig {
            batch_size: 1,
            ..Default::default()
        },
        TrainConfig {
            warmup_steps: 10,
            total_steps: 5,
            ..Default::default()
        },
        TrainConfig {
            beta2: 1.0,
            ..Default::default()
        },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
    }
}

fn tiny_run(kind: EmbeddingKind, steps: usize, seed: u64) -> (Vocab, TrainConfig, ModelConfig) {
    let vocab = Vocab::synthetic(512).unwrap();
    let tcfg = TrainConfig {
        batch_size: 16,
        total_steps: steps,
        peak_lr: 2e-3,
        warmup_steps: 5,
        seed,
        log_every: 10,
        max_len: 16,
        ..Default::default()
    };
    let mcfg = ModelConfig {
        d_model: 32,
        n_heads: 1,
        vocab_size: vocab.len(),
        embedding_kind: kind,
        dropout_p: if kind == EmbeddingKind::Learned { 0.1 } else { 0.0 },
        max_seq_len: 16,
        seed,
        ..Default::default()
    };
    (vocab, tcfg, mcfg)
}

#[test]
fn short_run_reduces_loss_and_logs() {
    let (vocab, tcfg, mcfg) = tiny_run(EmbeddingKind::Fourier, 50, 3);
    let pairs = synth_pairs(256, &vocab, 3, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outputs = TrainOutputs {
        checkpoint_dir: Some(dir.path().join("ckpt")),
        metrics_csv: Some(dir.path().join("metrics.csv")),
    };
    let tcfg = TrainConfig {
        checkpoint_every: 25,
        ..tcfg
    };
    let out = train_loop(Model::<f32>::build(mcfg).unwrap(), &pairs, &vocab, &tcfg, &outputs).unwrap();
    assert_eq!(out.losses.len(), 50);
    assert!(smoothed_tail(&out.losses, 10) < out.losses[0]);
    let steps: Vec<usize> = out.metrics.iter().map(|m| m.step).collect();
    assert_eq!(steps, vec![1, 10, 20, 30, 40, 50]);
    assert_eq!(out.checkpoints.len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(csv.starts_with(METRICS_HEADER));
    assert_eq!(csv.lines().count(), 7);
    let (lo, hi) = logit_scale_bounds();
    let ls = out.model.logit_scale() as f64;
    assert!(ls >= lo - 1e-6 && ls <= hi + 1e-6);
}

#[test]
fn runs_are_deterministic() {
    let (vocab, tcfg, mcfg) = tiny_run(EmbeddingKind::Learned, 12, 9);
    let pairs = synth_pairs(64, &vocab, 9, 4).unwrap();
    let run = || train_loop(Model::<f32>::build(mcfg.clone()).unwrap(), &pairs, &vocab, &tcfg, &TrainOutputs::default()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.model, b.model);
    assert_eq!(a.losses, b.losses);
}

#[test]
fn in_batch_targets_are_the_diagonal() {
    let a: Tensor<f64> = Tensor::from_f64([3, 2], &[1.0, 0.0, 0.0, 1.0, -1.0, 0.1]).unwrap();
    assert_eq!(retrieval_hits(&a, &a), 3);
    let shuffled = Tensor::from_f64([3, 2], &[0.0, 1.0, 1.0, 0.0, -1.0, 0.1]).unwrap();
    assert_eq!(retrieval_hits(&a, &shuffled), 1);
}

#[test]
fn too_few_pairs_for_a_batch() {
    let (vocab, tcfg, mcfg) = tiny_run(EmbeddingKind::Fourier, 10, 1);
    let pairs = synth_pairs(8, &vocab, 1, 2).unwrap();
    let err = train_loop(Model::<f32>::build(mcfg).unwrap(), &pairs, &vocab, &tcfg, &TrainOutputs::default()).unwrap_err();
    assert!(matches!(err, TrainError::InvalidInput(_)), "{err}");
}

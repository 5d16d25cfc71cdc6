//! Kernels and the optimizer against naive reference implementations.
#![cfg(not(feature = "f32"))]

use numerics::ops::{cross_entropy, matmul, softmax};
use numerics::{lr_at, AdamW, Gradients, ParamGroup, ParamStore, Real, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn naive_matmul(a: &[Real], b: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<Real> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b: Vec<Real> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
    let got = matmul(
        &Tensor::new(vec![3, 4], a.clone()).unwrap(),
        &Tensor::new(vec![4, 2], b.clone()).unwrap(),
    )
    .unwrap();
    let want = naive_matmul(&a, &b, 3, 4, 2);
    for (g, w) in got.data().iter().zip(&want) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::new(
        vec![20, 17],
        (0..340).map(|_| rng.random_range(-30.0..30.0)).collect(),
    )
    .unwrap();
    let y = softmax(&x, 1).unwrap();
    for r in 0..20 {
        let s: Real = y.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-12, "row {r} sums to {s}");
    }
}

#[test]
fn softmax_shift_invariance() {
    let x = Tensor::new(vec![4], vec![0.3, -1.0, 2.0, 0.0]).unwrap();
    let shifted = Tensor::new(vec![4], x.data().iter().map(|v| v + 123.4).collect()).unwrap();
    let a = softmax(&x, 0).unwrap();
    let b = softmax(&shifted, 0).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_matches_per_token_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (steps, vocab, pad) = (7, 9, 0);
    let logits: Vec<Real> = (0..steps * vocab).map(|_| rng.random_range(-3.0..3.0)).collect();
    let targets = [3, 0, 8, 1, 0, 5, 2];
    let mut total = 0.0;
    let mut count = 0;
    for (t, &y) in targets.iter().enumerate() {
        if y == pad {
            continue;
        }
        let row = &logits[t * vocab..(t + 1) * vocab];
        let z: Real = row.iter().map(|v| v.exp()).sum();
        total += -(row[y].exp() / z).ln();
        count += 1;
    }
    let want = total / count as Real;
    let got = cross_entropy(&Tensor::new(vec![steps, vocab], logits).unwrap(), &targets, pad).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

/// Scalar AdamW written out longhand.
fn reference_adamw(mut w: Real, grads: &[Real], lr: Real, wd: Real) -> Real {
    let (b1, b2, eps): (Real, Real, Real) = (0.9, 0.999, 1e-8);
    let (mut m, mut v) = (0.0, 0.0);
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        w -= lr * wd * w;
        w -= lr * mh / (vh.sqrt() + eps);
    }
    w
}

#[test]
fn adamw_three_step_trajectory() {
    let grads = [0.5, -1.25, 2.0];
    let mut store = ParamStore::new();
    let id = store
        .add("w", Tensor::new(vec![1], vec![1.5]).unwrap(), ParamGroup::Slm)
        .unwrap();
    let mut opt = AdamW::default();
    for g in grads {
        let mut gr = Gradients::new(1);
        gr.accumulate(id, &[g]);
        opt.step(&mut store, &gr, 0.01, 0.05).unwrap();
    }
    let want = reference_adamw(1.5, &grads, 0.01, 0.05);
    assert_eq!(store.tensor(id).data()[0], want);
}

#[test]
fn frozen_param_bitwise_unchanged_over_many_steps() {
    let mut store = ParamStore::new();
    let a = store
        .add("a", Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap(), ParamGroup::Slm)
        .unwrap();
    let b = store
        .add("b", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), ParamGroup::Fusion)
        .unwrap();
    store.set_group_trainable(ParamGroup::Slm, false);
    let before = store.group_hash(ParamGroup::Slm);
    let mut opt = AdamW::default();
    for i in 0..100 {
        let mut g = Gradients::new(2);
        g.accumulate(a, &[1.0, -1.0, i as Real]);
        g.accumulate(b, &[0.5, 0.5]);
        opt.step(&mut store, &g, 1e-2, 0.05).unwrap();
    }
    assert_eq!(store.group_hash(ParamGroup::Slm), before);
    assert!(opt.state(a).is_none());
    assert_ne!(store.tensor(b).data(), &[1.0, 2.0]);
}

#[test]
fn warmup_midpoint_is_half() {
    assert!((lr_at(50, 1000, 1e-5) - 0.5e-5).abs() < 1e-20);
    assert_eq!(lr_at(100, 1000, 1e-5), 1e-5);
}

proptest! {
    #[test]
    fn softmax_rows_always_normalised(vals in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let n = vals.len();
        let y = softmax(&Tensor::new(vec![n], vals.iter().map(|&v| v as Real).collect()).unwrap(), 0).unwrap();
        let s: Real = y.data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(y.data().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn lr_never_exceeds_base(step in 0u64..10_000, total in 1u64..5_000) {
        let lr = lr_at(step, total, 1e-3);
        prop_assert!((0.0..=1e-3).contains(&lr));
    }
}

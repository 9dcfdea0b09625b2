mod common;

use common::*;
use drivecls::eval::{ranked, top_k};
use drivecls::ops::{
    self, batchnorm_infer, concat_channels, conv2d, conv2d_lowered, conv2d_lowered_threaded, fold_bn,
    global_avg_pool, linear, softmax, split_channels, BnParams, ConvParams,
};
use drivecls::{Shape, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random_case(rng: &mut impl Rng, kernels: &[usize]) -> (Tensor, ConvParams) {
    let k = kernels[rng.random_range(0..kernels.len())];
    let stride = rng.random_range(1..=2);
    let padding = rng.random_range(0..=k / 2 + 1);
    let ci = rng.random_range(1..=8);
    let co = rng.random_range(1..=8);
    let n = rng.random_range(1..=2);
    let h = rng.random_range(k.max(1)..=13);
    let w = rng.random_range(k.max(1)..=13);
    let x = random_tensor(rng, Shape::new(n, ci, h, w));
    let weight = random_tensor(rng, Shape::new(co, ci, k, k));
    let bias = rng.random_bool(0.5).then(|| (0..co).map(|_| rng.random_range(-1.0..1.0)).collect());
    (x, ConvParams::new(weight, bias, stride, padding).unwrap())
}

#[test]
fn direct_conv_matches_brute_force() {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (x, p) = random_case(&mut r, &[1, 3, 5]);
        let got = conv2d(&x, &p).unwrap();
        let want = conv_oracle(&x, &p);
        assert_eq!(got.shape(), want.shape());
        worst = worst.max(max_rel_err(got.data(), want.data()));
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn strided_padded_example() {
    let mut r = rng(2);
    let x = random_tensor(&mut r, Shape::new(2, 3, 8, 8));
    let p = ConvParams::new(random_tensor(&mut r, Shape::new(4, 3, 3, 3)), None, 2, 1).unwrap();
    let want = conv_oracle(&x, &p);
    assert_eq!(want.shape(), Shape::new(2, 4, 4, 4));
    assert!(max_rel_err(conv2d(&x, &p).unwrap().data(), want.data()) <= 1e-4);
    assert!(max_rel_err(conv2d_lowered(&x, &p).unwrap().data(), want.data()) <= 1e-4);
}

#[test]
fn lowered_conv_agrees_with_direct() {
    let mut r = rng(3);
    for _ in 0..200 {
        let (x, p) = random_case(&mut r, &[1, 3]);
        let direct = conv2d(&x, &p).unwrap();
        let lowered = conv2d_lowered(&x, &p).unwrap();
        assert_eq!(direct.shape(), lowered.shape());
        for (&a, &b) in direct.data().iter().zip(lowered.data()) {
            assert!((a - b).abs() <= 1e-4 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn threaded_lowering_is_deterministic() {
    let mut r = rng(4);
    for _ in 0..30 {
        let (x, p) = random_case(&mut r, &[1, 3]);
        let one = conv2d_lowered(&x, &p).unwrap();
        for threads in [2, 3, 7] {
            assert_eq!(conv2d_lowered_threaded(&x, &p, threads).unwrap(), one);
        }
    }
}

#[test]
fn larger_layers_stay_within_tolerance() {
    // Exercise the GEMM blocking edges (K > 256, N > 1024).
    let mut r = rng(5);
    for (ci, co, k, hw, s) in [(64, 96, 3, 40, 1), (40, 17, 3, 37, 2), (300, 9, 1, 5, 1)] {
        let x = random_tensor(&mut r, Shape::new(1, ci, hw, hw));
        let p = ConvParams::new(random_tensor(&mut r, Shape::new(co, ci, k, k)), None, s, k / 2).unwrap();
        let want = conv_oracle(&x, &p);
        assert!(max_rel_err(conv2d_lowered(&x, &p).unwrap().data(), want.data()) <= 1e-4);
        assert!(max_rel_err(conv2d(&x, &p).unwrap().data(), want.data()) <= 1e-4);
    }
}

#[test]
fn batchnorm_matches_scalar_loop() {
    let mut r = rng(6);
    for _ in 0..20 {
        let c = r.random_range(1..10);
        let x = random_tensor(&mut r, Shape::new(2, c, 5, 4));
        let bn = random_bn(&mut r, c, 1e-3);
        let got = batchnorm_infer(&x, &bn).unwrap();
        assert!(max_abs_err(got.data(), bn_oracle(&x, &bn).data()) <= 1e-6);
    }
}

#[test]
fn folding_matches_sequential_composition() {
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (x, p) = random_case(&mut r, &[1, 3]);
        let bn = random_bn(&mut r, p.c_out(), 1e-3);
        let sequential = batchnorm_infer(&conv2d(&x, &p).unwrap(), &bn).unwrap();
        let folded = fold_bn(&p, &bn).unwrap();
        assert!(folded.bias.is_some());
        worst = worst.max(max_abs_err(conv2d(&x, &folded).unwrap().data(), sequential.data()));
    }
    assert!(worst <= 1e-5, "worst absolute error {worst}");
}

#[test]
fn identity_fold_keeps_weights() {
    let mut r = rng(8);
    let w = random_tensor(&mut r, Shape::new(3, 2, 3, 3));
    let p = ConvParams::new(w.clone(), None, 1, 1).unwrap();
    let folded = fold_bn(&p, &BnParams::identity(3, 0.0)).unwrap();
    assert_eq!(folded.weight, w);
    assert_eq!(folded.bias, Some(vec![0.0; 3]));
}

#[test]
fn pooling_and_linear_match_loops() {
    let mut r = rng(9);
    let x = random_tensor(&mut r, Shape::new(2, 5, 7, 3));
    let pooled = global_avg_pool(&x).unwrap();
    for n in 0..2 {
        for c in 0..5 {
            let mut s = 0.0f64;
            for h in 0..7 {
                for w in 0..3 {
                    s += x.at(n, c, h, w) as f64;
                }
            }
            assert!((pooled.at(n, c, 0, 0) as f64 - s / 21.0).abs() <= 1e-6);
        }
    }
    let w = random_tensor(&mut r, Shape::new(6, 11, 1, 1));
    let b: Vec<f32> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
    let v: Vec<f32> = (0..11).map(|_| r.random_range(-1.0..1.0)).collect();
    let got = linear(&v, &w, &b).unwrap();
    for o in 0..6 {
        let want: f64 = b[o] as f64 + (0..11).map(|i| w.at(o, i, 0, 0) as f64 * v[i] as f64).sum::<f64>();
        assert!((got[o] as f64 - want).abs() <= 1e-5);
    }
}

#[test]
fn silu_matches_scalar() {
    let mut r = rng(10);
    let x = random_tensor(&mut r, Shape::new(1, 3, 4, 4)).map(|v| v * 12.0);
    assert!(max_abs_err(ops::silu(&x).data(), silu_oracle(&x).data()) <= 1e-6);
}

fn topk_sort_oracle(row: &[f32], truth: usize, k: usize) -> bool {
    let mut pairs: Vec<(f32, usize)> = row.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    pairs[..k].iter().any(|&(_, c)| c == truth)
}

#[test]
fn top_k_matches_full_sort() {
    let mut r = rng(11);
    for trial in 0..20 {
        // Coarse values force ties on some trials.
        let coarse = trial % 2 == 0;
        let rows: Vec<Vec<f32>> = (0..50)
            .map(|_| {
                (0..10)
                    .map(|_| if coarse { r.random_range(0..4) as f32 } else { r.random_range(-5.0..5.0) })
                    .collect()
            })
            .collect();
        let labels: Vec<usize> = (0..50).map(|_| r.random_range(0..10)).collect();
        for k in 1..=10 {
            let want = rows
                .iter()
                .zip(&labels)
                .filter(|(row, &t)| topk_sort_oracle(row, t, k))
                .count() as f64
                / 50.0;
            assert_eq!(top_k(&rows, &labels, k).unwrap(), want);
        }
        for row in &rows {
            let mut order: Vec<usize> = (0..10).collect();
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            assert_eq!(ranked(row), order);
        }
    }
}

fn argmax(v: &[f32]) -> usize {
    ranked(v)[0]
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-30.0f32..30.0, 1..40), shift in -100.0f32..100.0) {
        let p = softmax(&logits).unwrap();
        prop_assert!(p.iter().all(|&v| v > 0.0));
        let sum: f64 = p.iter().map(|&v| v as f64).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-6);
        let shifted: Vec<f32> = logits.iter().map(|v| v + shift).collect();
        let q = softmax(&shifted).unwrap();
        // The shift itself rounds in f32; compare against the rounded logits' own softmax.
        let exact: Vec<f64> = {
            let m = shifted.iter().copied().fold(f32::MIN, f32::max) as f64;
            let e: Vec<f64> = shifted.iter().map(|&v| (v as f64 - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        };
        for (a, b) in q.iter().zip(&exact) {
            prop_assert!((*a as f64 - b).abs() <= 1e-6);
        }
        prop_assert_eq!(argmax(&p), argmax(&logits));
    }

    #[test]
    fn split_inverts_concat(ca in 1usize..5, cb in 1usize..5, h in 1usize..5, w in 1usize..5, seed in 0u64..1000) {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, Shape::new(2, ca, h, w));
        let b = random_tensor(&mut r, Shape::new(2, cb, h, w));
        let joined = concat_channels(&[&a, &b]).unwrap();
        prop_assert_eq!(joined.shape(), Shape::new(2, ca + cb, h, w));
        let parts = split_channels(&joined, &[ca, cb]).unwrap();
        prop_assert_eq!(&parts[0], &a);
        prop_assert_eq!(&parts[1], &b);
        prop_assert_eq!(ops::add(&a, &Tensor::zeros(a.shape())).unwrap(), a);
    }

    #[test]
    fn kernels_are_pure(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let (x, p) = random_case(&mut r, &[1, 3]);
        prop_assert_eq!(conv2d(&x, &p).unwrap(), conv2d(&x, &p).unwrap());
        prop_assert_eq!(conv2d_lowered(&x, &p).unwrap(), conv2d_lowered(&x, &p).unwrap());
        prop_assert!(conv2d_lowered(&x, &p).unwrap().is_finite());
    }
}

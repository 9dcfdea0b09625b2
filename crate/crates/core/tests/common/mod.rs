#![allow(dead_code)]

use drivecls::dataset::NUM_CLASSES;
use drivecls::ops::{BnParams, ConvParams};
use drivecls::train::{grad_head, Example, HeadWeights};
use drivecls::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

pub fn random_bn(rng: &mut impl Rng, c: usize, eps: f32) -> BnParams {
    let mut v = |lo: f32, hi: f32| (0..c).map(|_| rng.random_range(lo..hi)).collect::<Vec<f32>>();
    let (g, b, m, var) = (v(0.5, 1.5), v(-0.5, 0.5), v(-0.5, 0.5), v(0.25, 2.0));
    BnParams::new(g, b, m, var, eps).unwrap()
}

/// Six nested loops, f64 accumulation.
pub fn conv_oracle(x: &Tensor, p: &ConvParams) -> Tensor {
    let s = x.shape();
    let w = &p.weight;
    let (co, ci, k) = (w.shape().n, w.shape().c, w.shape().h);
    let oh = (s.h + 2 * p.padding - k) / p.stride + 1;
    let ow = (s.w + 2 * p.padding - k) / p.stride + 1;
    Tensor::from_fn(Shape::new(s.n, co, oh, ow), |n, o, y, xo| {
        let mut acc = p.bias.as_ref().map_or(0.0, |b| b[o] as f64);
        for c in 0..ci {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (y * p.stride + ky) as isize - p.padding as isize;
                    let ix = (xo * p.stride + kx) as isize - p.padding as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                        acc += w.at(o, c, ky, kx) as f64 * x.at(n, c, iy as usize, ix as usize) as f64;
                    }
                }
            }
        }
        acc as f32
    })
}

/// Per-channel scalar loop.
pub fn bn_oracle(x: &Tensor, bn: &BnParams) -> Tensor {
    Tensor::from_fn(x.shape(), |n, c, h, w| {
        let v = x.at(n, c, h, w) as f64;
        let d = (bn.running_var[c] as f64 + bn.eps as f64).sqrt();
        ((v - bn.running_mean[c] as f64) / d * bn.gamma[c] as f64 + bn.beta[c] as f64) as f32
    })
}

pub fn silu_oracle(x: &Tensor) -> Tensor {
    x.map(|v| (v as f64 / (1.0 + (-(v as f64)).exp())) as f32)
}

/// `|a − b| / max(1, |b|)`, maximised over elements.
pub fn max_rel_err(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).abs() / (y as f64).abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn max_abs_err(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).fold(0.0, f64::max)
}

/// Loss of one example in f64, including the `l2·‖W‖²` term.
pub fn loss_f64(w: &[f64], b: &[f64], x: &[f32], class: usize, l2: f64) -> f64 {
    let d = x.len();
    let z: Vec<f64> = b
        .iter()
        .enumerate()
        .map(|(j, bj)| bj + (0..d).map(|i| w[j * d + i] * x[i] as f64).sum::<f64>())
        .collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[class] + l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Largest relative error between analytic and central-difference gradients.
pub fn gradient_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let classes = r.random_range(2..=10);
    let dim = r.random_range(1..=32);
    let l2 = if r.random_bool(0.5) { 0.0 } else { r.random_range(0.0..0.1) };
    let head = HeadWeights {
        classes,
        dim,
        weight: (0..classes * dim).map(|_| r.random_range(-1.0..1.0)).collect(),
        bias: (0..classes).map(|_| r.random_range(-1.0..1.0)).collect(),
    };
    let x: Vec<f32> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let class = r.random_range(0..classes);
    let g = grad_head(&x, &head, class, l2 as f32).unwrap();

    let w: Vec<f64> = head.weight.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = head.bias.iter().map(|&v| v as f64).collect();
    let h = 1e-3;
    let mut worst = 0.0f64;
    let mut compare = |analytic: f32, numeric: f64| {
        let a = analytic as f64;
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(rel);
    };
    for i in 0..w.len() {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp[i] += h;
        wm[i] -= h;
        let fd = (loss_f64(&wp, &b, &x, class, l2) - loss_f64(&wm, &b, &x, class, l2)) / (2.0 * h);
        compare(g.weight[i], fd);
    }
    for j in 0..b.len() {
        let (mut bp, mut bm) = (b.clone(), b.clone());
        bp[j] += h;
        bm[j] -= h;
        let fd = (loss_f64(&w, &bp, &x, class, l2) - loss_f64(&w, &bm, &x, class, l2)) / (2.0 * h);
        compare(g.bias[j], fd);
    }
    worst
}

pub const PADDED: usize = 1280;

/// Ten classes, two tight blobs each, every blob on its own axis of the first
/// 20 dimensions; the rest is zero padding.
pub fn blobs(scale: f32, per_blob: usize, seed: u64) -> Vec<Example> {
    let mut r = rng(seed);
    let noise = Normal::new(0.0f32, 0.1 * scale).unwrap();
    let mut out = Vec::new();
    for class in 0..NUM_CLASSES {
        for blob in 0..2 {
            for _ in 0..per_blob {
                let mut features = vec![0.0f32; PADDED];
                for v in features.iter_mut().take(20) {
                    *v = noise.sample(&mut r);
                }
                features[2 * class + blob] += scale;
                out.push(Example { features, label: class });
            }
        }
    }
    out
}


//! Single-image latency benchmarking with parameter and FLOP figures attached.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{count_macs, count_params, Model};
use crate::tensor::{Shape, Tensor};

pub const BENCH_SCHEMA: &str = "drivecls.bench/1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub schema: &'static str,
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
    pub input_size: usize,
    pub iters: usize,
    pub warmup: usize,
    pub threads: usize,
    pub latency_ms: LatencyStats,
    /// Raw per-call timings in milliseconds, in run order.
    pub samples_ms: Vec<f64>,
}

/// Nearest-rank percentile of an ascending slice: `sorted[ceil(p/100 · n) − 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn latency_stats(samples: &[f64]) -> Result<LatencyStats> {
    if samples.is_empty() {
        return Err(Error::Empty("latency_stats"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        p50: percentile(&sorted, 50.0),
        p90: percentile(&sorted, 90.0),
        p99: percentile(&sorted, 99.0),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    })
}

/// `warmup` untimed forwards, then `iters` individually timed forwards on a
/// fixed seeded `(1, c, s, s)` input.
pub fn bench(model: &Model, input_size: usize, iters: usize, warmup: usize, threads: usize) -> Result<BenchReport> {
    if !model.is_bound() {
        return Err(Error::Unbound);
    }
    if iters < 10 || warmup < 1 {
        return Err(Error::Config(format!(
            "bench needs iters ≥ 10 and warmup ≥ 1, got {iters}/{warmup}"
        )));
    }
    let c = model.layers().first().map_or(3, |l| l.c_in());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let input = Tensor::from_fn(Shape::new(1, c, input_size, input_size), |_, _, _, _| rng.random());
    let threads = threads.max(1);

    for _ in 0..warmup {
        model.forward_threaded(&input, threads)?;
    }
    let mut samples_ms = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        let out = model.forward_threaded(&input, threads)?;
        samples_ms.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let cost = count_macs(model, input_size);
    Ok(BenchReport {
        schema: BENCH_SCHEMA,
        params: count_params(model),
        macs: cost.macs,
        flops: cost.flops,
        input_size,
        iters,
        warmup,
        threads,
        latency_ms: latency_stats(&samples_ms)?,
        samples_ms,
    })
}

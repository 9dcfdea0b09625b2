//! Layer kernels for the classification graph.

pub mod conv;
pub mod gemm;

pub use conv::{conv2d, conv2d_lowered, conv2d_lowered_threaded, ConvParams};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Inference-mode batch-norm statistics and affine terms for `c` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
}

impl BnParams {
    pub fn new(
        gamma: Vec<f32>,
        beta: Vec<f32>,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
        eps: f32,
    ) -> Result<Self> {
        let c = gamma.len();
        for (what, len) in [
            ("beta", beta.len()),
            ("running_mean", running_mean.len()),
            ("running_var", running_var.len()),
        ] {
            if len != c {
                return Err(Error::Shape {
                    op: "BnParams",
                    expected: format!("{c} channels"),
                    actual: format!("{len} in {what}"),
                });
            }
        }
        if running_var.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Config("batch-norm running_var must be non-negative".into()));
        }
        if !(eps >= 0.0) {
            return Err(Error::Config("batch-norm eps must be non-negative".into()));
        }
        Ok(BnParams {
            gamma,
            beta,
            running_mean,
            running_var,
            eps,
        })
    }

    /// gamma=1, beta=0, mean=0, var=1.
    pub fn identity(c: usize, eps: f32) -> Self {
        BnParams {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` such that `bn(x) = x·scale + shift`.
    pub fn affine(&self) -> impl Iterator<Item = (f32, f32)> + '_ {
        (0..self.channels()).map(|c| {
            let scale = self.gamma[c] / (self.running_var[c] + self.eps).sqrt();
            (scale, self.beta[c] - self.running_mean[c] * scale)
        })
    }
}

pub fn batchnorm_infer(input: &Tensor, bn: &BnParams) -> Result<Tensor> {
    let s = input.shape();
    if s.c != bn.channels() {
        return Err(Error::shape("batchnorm_infer", bn.channels(), s.c));
    }
    let mut out = input.clone();
    let plane = s.plane();
    for (i, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
        let c = i % s.c;
        let denom = (bn.running_var[c] + bn.eps).sqrt();
        let (mean, gamma, beta) = (bn.running_mean[c], bn.gamma[c], bn.beta[c]);
        for v in chunk {
            *v = (*v - mean) / denom * gamma + beta;
        }
    }
    Ok(out)
}

/// Absorbs `bn` into the convolution so that one biased convolution replaces both.
pub fn fold_bn(p: &ConvParams, bn: &BnParams) -> Result<ConvParams> {
    if p.c_out() != bn.channels() {
        return Err(Error::shape("fold_bn", p.c_out(), bn.channels()));
    }
    let per_out = p.weight.shape().item();
    let mut weight = p.weight.clone();
    let mut bias = Vec::with_capacity(bn.channels());
    for (oc, (scale, _)) in bn.affine().enumerate() {
        for w in &mut weight.data_mut()[oc * per_out..(oc + 1) * per_out] {
            *w *= scale;
        }
        let b = p.bias.as_ref().map_or(0.0, |b| b[oc]);
        bias.push((b - bn.running_mean[oc]) * scale + bn.beta[oc]);
    }
    ConvParams::new(weight, Some(bias), p.stride, p.padding)
}

#[inline]
pub fn silu_scalar(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// `x · sigmoid(x)` elementwise.
pub fn silu(input: &Tensor) -> Tensor {
    input.map(silu_scalar)
}

pub(crate) fn silu_in_place(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = silu_scalar(*v);
    }
}

/// Numerically stable softmax (max-subtracted, f64 normalizer).
pub fn softmax(logits: &[f32]) -> Result<Vec<f32>> {
    let max = logits
        .iter()
        .copied()
        .fold(None, |m: Option<f32>, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or(Error::Empty("softmax"))?;
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) as f64).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|e| (e / sum) as f32).collect())
}

/// Spatial mean per channel, `(n, c, 1, 1)`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.plane() == 0 {
        return Err(Error::Empty("global_avg_pool"));
    }
    let data = input
        .data()
        .chunks_exact(s.plane())
        .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / s.plane() as f64) as f32)
        .collect();
    Tensor::new(Shape::new(s.n, s.c, 1, 1), data)
}

/// `weight · input + bias` with `weight` shaped `(d_out, d_in, 1, 1)`.
pub fn linear(input: &[f32], weight: &Tensor, bias: &[f32]) -> Result<Vec<f32>> {
    let ws = weight.shape();
    let (d_out, d_in) = (ws.n, ws.item());
    if input.len() != d_in {
        return Err(Error::shape("linear input", d_in, input.len()));
    }
    if bias.len() != d_out {
        return Err(Error::shape("linear bias", d_out, bias.len()));
    }
    Ok(weight
        .data()
        .chunks_exact(d_in.max(1))
        .take(d_out)
        .zip(bias)
        .map(|(row, &b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f32>() + b)
        .collect())
}

/// Concatenates along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or(Error::Empty("concat_channels"))?.shape();
    let mut c = 0;
    for t in parts {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape("concat_channels", first, s));
        }
        c += s.c;
    }
    let shape = Shape::new(first.n, c, first.h, first.w);
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..first.n {
        for t in parts {
            data.extend_from_slice(t.item(n));
        }
    }
    Tensor::new(shape, data)
}

/// Partitions the channel axis into consecutive groups of the given sizes.
pub fn split_channels(t: &Tensor, parts: &[usize]) -> Result<Vec<Tensor>> {
    let s = t.shape();
    let total: usize = parts.iter().sum();
    if total != s.c {
        return Err(Error::shape("split_channels", s.c, format!("{parts:?} (sum {total})")));
    }
    let mut out: Vec<Vec<f32>> = parts.iter().map(|&c| Vec::with_capacity(s.n * c * s.plane())).collect();
    for n in 0..s.n {
        let mut off = 0;
        let item = t.item(n);
        for (buf, &c) in out.iter_mut().zip(parts) {
            buf.extend_from_slice(&item[off * s.plane()..(off + c) * s.plane()]);
            off += c;
        }
    }
    out.into_iter()
        .zip(parts)
        .map(|(data, &c)| Tensor::new(Shape::new(s.n, c, s.h, s.w), data))
        .collect()
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

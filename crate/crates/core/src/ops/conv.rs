//! 2-D convolution: a direct reference path and a patch-matrix lowered path.

use crate::error::{Error, Result};
use crate::ops::gemm;
use crate::tensor::{Shape, Tensor};

/// Convolution weights `(c_out, c_in, k, k)` with optional per-output bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Option<Vec<f32>>, stride: usize, padding: usize) -> Result<Self> {
        let s = weight.shape();
        if s.h != s.w {
            return Err(Error::shape("ConvParams", "square kernel", s));
        }
        if stride == 0 {
            return Err(Error::Config("convolution stride must be positive".into()));
        }
        if let Some(b) = &bias {
            if b.len() != s.n {
                return Err(Error::shape("ConvParams bias", s.n, b.len()));
            }
        }
        Ok(ConvParams {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().h
    }

    /// Output extent for an input of `input` shape, validating channels and size.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.c_in() {
            return Err(Error::shape(
                "conv2d",
                format!("{} input channels", self.c_in()),
                format!("{} channels in {input}", input.c),
            ));
        }
        let k = self.kernel();
        let out = |len: usize| -> Option<usize> {
            let padded = len + 2 * self.padding;
            (padded >= k).then(|| (padded - k) / self.stride + 1)
        };
        match (out(input.h), out(input.w)) {
            (Some(h), Some(w)) => Ok(Shape::new(input.n, self.c_out(), h, w)),
            _ => Err(Error::shape(
                "conv2d",
                format!("spatial dims ≥ {} after padding {}", k, self.padding),
                input,
            )),
        }
    }
}

/// Direct convolution: every output site is the dot product of its receptive field
/// with the kernel, plus bias.
pub fn conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let is = input.shape();
    let os = p.output_shape(is)?;
    let k = p.kernel();
    let w = p.weight.data();
    let x = input.data();
    let pad = p.padding as isize;
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..os.n {
        for oc in 0..os.c {
            let b = p.bias.as_ref().map_or(0.0, |b| b[oc]);
            for oh in 0..os.h {
                for ow in 0..os.w {
                    let mut acc = 0.0f32;
                    for ic in 0..is.c {
                        for kh in 0..k {
                            let ih = (oh * p.stride + kh) as isize - pad;
                            if ih < 0 || ih >= is.h as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (ow * p.stride + kw) as isize - pad;
                                if iw < 0 || iw >= is.w as isize {
                                    continue;
                                }
                                let xi = input.index(n, ic, ih as usize, iw as usize);
                                let wi = ((oc * is.c + ic) * k + kh) * k + kw;
                                acc += x[xi] * w[wi];
                            }
                        }
                    }
                    out.push(acc + b);
                }
            }
        }
    }
    Tensor::new(os, out)
}

/// Convolution via patch-matrix lowering and a packed matrix multiply.
pub fn conv2d_lowered(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    conv2d_lowered_threaded(input, p, 1)
}

/// [`conv2d_lowered`] with the matrix multiply split across `threads` workers.
/// Results do not depend on `threads`.
pub fn conv2d_lowered_threaded(input: &Tensor, p: &ConvParams, threads: usize) -> Result<Tensor> {
    let is = input.shape();
    let os = p.output_shape(is)?;
    let k = p.kernel();
    let rows = is.c * k * k;
    let cols = os.plane();
    let pointwise = k == 1 && p.stride == 1 && p.padding == 0;

    let mut out = vec![0.0f32; os.numel()];
    let mut col = if pointwise { Vec::new() } else { vec![0.0f32; rows * cols] };
    for n in 0..is.n {
        let dst = &mut out[n * os.item()..(n + 1) * os.item()];
        match &p.bias {
            Some(b) => {
                for (plane, &bv) in dst.chunks_exact_mut(cols).zip(b) {
                    plane.fill(bv);
                }
            }
            None => dst.fill(0.0),
        }
        let patches: &[f32] = if pointwise {
            input.item(n)
        } else {
            im2col(input.item(n), is, k, p.stride, p.padding, os.h, os.w, &mut col);
            &col
        };
        gemm::sgemm_acc_threaded(os.c, cols, rows, p.weight.data(), patches, dst, threads);
    }
    Tensor::new(os, out)
}

/// Unfolds one batch item into a `(c·k·k) × (out_h·out_w)` matrix; padded taps are zero.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    item: &[f32],
    is: Shape,
    k: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    col: &mut [f32],
) {
    let cols = out_h * out_w;
    debug_assert_eq!(col.len(), is.c * k * k * cols);
    for ic in 0..is.c {
        let plane = &item[ic * is.plane()..(ic + 1) * is.plane()];
        for kh in 0..k {
            for kw in 0..k {
                let row = (ic * k + kh) * k + kw;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oh in 0..out_h {
                    let ih = (oh * stride + kh) as isize - padding as isize;
                    let line = &mut dst[oh * out_w..(oh + 1) * out_w];
                    if ih < 0 || ih >= is.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * is.w..(ih as usize + 1) * is.w];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = (ow * stride + kw) as isize - padding as isize;
                        *v = if iw < 0 || iw >= is.w as isize {
                            0.0
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const INPUT_SIZE: usize = 224;

/// Decodes any supported container to packed 8-bit RGB, returning `(width, height, pixels)`.
pub fn decode_rgb(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let img = ::image::load_from_memory(bytes).map_err(|e| Error::Image {
        path: None,
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    Ok((rgb.width() as usize, rgb.height() as usize, rgb.into_raw()))
}

/// Bilinear resize of a single channel plane (half-pixel centres, clamped edges).
pub fn bilinear_resize(src: &[f32], in_w: usize, in_h: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f32 / out as f32;
        (0..out)
            .map(|o| {
                let s = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f32);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, s - i0 as f32)
            })
            .collect()
    };
    let xs = axis(out_w, in_w);
    let ys = axis(out_h, in_h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * in_w + x0] * (1.0 - fx) + src[y0 * in_w + x1] * fx;
            let bot = src[y1 * in_w + x0] * (1.0 - fx) + src[y1 * in_w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Packed RGB bytes to a `(1, 3, size, size)` tensor in `[0, 1]`.
pub fn preprocess_rgb(width: usize, height: usize, rgb: &[u8], size: usize) -> Result<Tensor> {
    if width == 0 || height == 0 || rgb.len() != width * height * 3 {
        return Err(Error::Image {
            path: None,
            reason: format!("expected {width}×{height}×3 bytes, got {}", rgb.len()),
        });
    }
    let mut data = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        let plane: Vec<f32> = rgb.iter().skip(c).step_by(3).map(|&v| v as f32).collect();
        let resized = if (width, height) == (size, size) {
            plane
        } else {
            bilinear_resize(&plane, width, height, size, size)
        };
        data.extend(resized.into_iter().map(|v| (v / 255.0).clamp(0.0, 1.0)));
    }
    Tensor::new(Shape::new(1, 3, size, size), data)
}

/// Decode, resize to 224×224 (aspect not preserved) and scale to `[0, 1]`.
pub fn preprocess(bytes: &[u8]) -> Result<Tensor> {
    let (w, h, rgb) = decode_rgb(bytes)?;
    preprocess_rgb(w, h, &rgb, INPUT_SIZE)
}

pub fn load_image(path: impl AsRef<Path>, size: usize) -> Result<Tensor> {
    let path = path.as_ref();
    let with_path = |e: Error| match e {
        Error::Image { reason, .. } => Error::Image {
            path: Some(path.to_path_buf()),
            reason,
        },
        other => other,
    };
    let bytes = std::fs::read(path).map_err(|e| Error::Image {
        path: Some(path.to_path_buf()),
        reason: e.to_string(),
    })?;
    let (w, h, rgb) = decode_rgb(&bytes).map_err(with_path)?;
    preprocess_rgb(w, h, &rgb, size).map_err(with_path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipMode {
    /// Mirror the image, keep the label.
    Plain,
    /// Mirror the image and swap left/right-hand classes (c1↔c3, c2↔c4).
    SwapHandedness,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AugmentPolicy {
    pub rotate_deg_max: f32,
    /// Off by default: c1–c4 differ only by handedness.
    pub hflip_prob: f32,
    pub scale_range: (f32, f32),
    pub flip_mode: FlipMode,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            rotate_deg_max: 10.0,
            hflip_prob: 0.0,
            scale_range: (0.9, 1.1),
            flip_mode: FlipMode::SwapHandedness,
        }
    }
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        AugmentPolicy {
            rotate_deg_max: 0.0,
            hflip_prob: 0.0,
            scale_range: (1.0, 1.0),
            flip_mode: FlipMode::Plain,
        }
    }
}

/// Left/right-hand counterpart of a class id.
pub fn swap_handedness(class_id: usize) -> usize {
    match class_id {
        1 => 3,
        3 => 1,
        2 => 4,
        4 => 2,
        other => other,
    }
}

/// Mirrors every plane left to right.
pub fn hflip(t: &Tensor) -> Tensor {
    let s = t.shape();
    let mut out = t.clone();
    for row in out.data_mut().chunks_exact_mut(s.w.max(1)) {
        row.reverse();
    }
    out
}

/// Rotates counter-clockwise by `angle_deg` and zooms by `scale` about the
/// image centre; samples outside the source replicate the nearest edge.
pub fn rotate_scale(t: &Tensor, angle_deg: f32, scale: f32) -> Tensor {
    let s = t.shape();
    if angle_deg == 0.0 && scale == 1.0 {
        return t.clone();
    }
    let quarter = angle_deg / 90.0;
    if scale == 1.0 && quarter == quarter.round() && (s.h == s.w || quarter.rem_euclid(2.0) == 0.0) {
        return rotate_quarter_turns(t, quarter.round() as i64);
    }

    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (cx, cy) = ((s.w as f32 - 1.0) / 2.0, (s.h as f32 - 1.0) / 2.0);
    let mut out = Tensor::zeros(s);
    let plane = s.plane();
    for (src, dst) in t.data().chunks_exact(plane).zip(out.data_mut().chunks_exact_mut(plane)) {
        for y in 0..s.h {
            for x in 0..s.w {
                let (u, v) = ((x as f32 - cx) / scale, (y as f32 - cy) / scale);
                let sx = (cos * u - sin * v + cx).clamp(0.0, (s.w - 1) as f32);
                let sy = (sin * u + cos * v + cy).clamp(0.0, (s.h - 1) as f32);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(s.w - 1), (y0 + 1).min(s.h - 1));
                let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
                let top = src[y0 * s.w + x0] * (1.0 - fx) + src[y0 * s.w + x1] * fx;
                let bot = src[y1 * s.w + x0] * (1.0 - fx) + src[y1 * s.w + x1] * fx;
                dst[y * s.w + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Exact counter-clockwise rotation by `turns` quarter turns.
fn rotate_quarter_turns(t: &Tensor, turns: i64) -> Tensor {
    let s = t.shape();
    let (sin, cos): (i64, i64) = match turns.rem_euclid(4) {
        0 => (0, 1),
        1 => (1, 0),
        2 => (0, -1),
        _ => (-1, 0),
    };
    // Doubled centred coordinates keep the arithmetic integral.
    let (w, h) = (s.w as i64, s.h as i64);
    let mut out = Tensor::zeros(s);
    let plane = s.plane();
    for (src, dst) in t.data().chunks_exact(plane).zip(out.data_mut().chunks_exact_mut(plane)) {
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (2 * x - (w - 1), 2 * y - (h - 1));
                let sx = (cos * u - sin * v + (w - 1)) / 2;
                let sy = (sin * u + cos * v + (h - 1)) / 2;
                dst[(y * w + x) as usize] = src[(sy * w + sx) as usize];
            }
        }
    }
    out
}

/// Random rotation, zoom and (optional) flip. The three draws happen in that
/// order on every call regardless of the policy values.
pub fn augment<R: Rng + ?Sized>(t: &Tensor, policy: &AugmentPolicy, rng: &mut R) -> Tensor {
    augment_inner(t, policy, rng).0
}

/// [`augment`] plus the label after augmentation; only a
/// [`FlipMode::SwapHandedness`] flip changes it.
pub fn augment_labeled<R: Rng + ?Sized>(
    t: &Tensor,
    class_id: usize,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> (Tensor, usize) {
    let (out, flipped) = augment_inner(t, policy, rng);
    let label = if flipped && policy.flip_mode == FlipMode::SwapHandedness {
        swap_handedness(class_id)
    } else {
        class_id
    };
    (out, label)
}

fn augment_inner<R: Rng + ?Sized>(t: &Tensor, policy: &AugmentPolicy, rng: &mut R) -> (Tensor, bool) {
    let u_angle: f32 = rng.random();
    let u_scale: f32 = rng.random();
    let u_flip: f32 = rng.random();
    let angle = policy.rotate_deg_max * (2.0 * u_angle - 1.0);
    let (lo, hi) = policy.scale_range;
    let scale = lo + (hi - lo) * u_scale;
    let flipped = u_flip < policy.hflip_prob;
    let mut out = rotate_scale(t, angle, scale);
    if flipped {
        out = hflip(&out);
    }
    (out, flipped)
}

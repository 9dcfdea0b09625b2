//! Layer table for the classification graph and the tensor names it binds.

use serde::Serialize;

use crate::error::{Error, Result};

/// Width of the classify head's pointwise projection.
pub const HEAD_HIDDEN: usize = 1280;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModelConfig {
    pub depth_multiple: f32,
    pub width_multiple: f32,
    pub num_classes: usize,
    pub input_size: usize,
}

impl ModelConfig {
    /// The n-variant: depth 0.33, width 0.25, 224-pixel input.
    pub fn yolov8n_cls(num_classes: usize) -> Self {
        ModelConfig {
            depth_multiple: 0.33,
            width_multiple: 0.25,
            num_classes,
            input_size: 224,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |m: f32| m > 0.0 && m <= 1.0;
        if !in_unit(self.depth_multiple) || !in_unit(self.width_multiple) {
            return Err(Error::Config(format!(
                "depth/width multiples must lie in (0, 1], got {}/{}",
                self.depth_multiple, self.width_multiple
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.input_size == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        Ok(())
    }

    fn is_n_variant(&self) -> bool {
        (self.depth_multiple - 0.33).abs() < 1e-6 && (self.width_multiple - 0.25).abs() < 1e-6
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    /// conv (no bias) + batch norm + SiLU, padding `kernel / 2`.
    ConvBlock {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    },
    /// Cross-stage-partial block with `repeats` residual bottlenecks on `c_out / 2` channels.
    C2f {
        c_in: usize,
        c_out: usize,
        repeats: usize,
        shortcut: bool,
    },
    /// 1×1 ConvBlock to `hidden`, global average pool, linear to `num_classes`.
    ClassifyHead {
        c_in: usize,
        hidden: usize,
        num_classes: usize,
    },
}

impl LayerSpec {
    pub fn conv(c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::ConvBlock {
            c_in,
            c_out,
            kernel,
            stride,
        }
    }

    pub fn c2f(c_in: usize, c_out: usize, repeats: usize) -> Self {
        LayerSpec::C2f {
            c_in,
            c_out,
            repeats,
            shortcut: true,
        }
    }

    pub fn head(c_in: usize, num_classes: usize) -> Self {
        LayerSpec::ClassifyHead {
            c_in,
            hidden: HEAD_HIDDEN,
            num_classes,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::ConvBlock { .. } => "ConvBlock",
            LayerSpec::C2f { .. } => "C2f",
            LayerSpec::ClassifyHead { .. } => "ClassifyHead",
        }
    }

    pub fn c_in(&self) -> usize {
        match *self {
            LayerSpec::ConvBlock { c_in, .. }
            | LayerSpec::C2f { c_in, .. }
            | LayerSpec::ClassifyHead { c_in, .. } => c_in,
        }
    }

    /// Channels produced; for the head, the class count.
    pub fn c_out(&self) -> usize {
        match *self {
            LayerSpec::ConvBlock { c_out, .. } | LayerSpec::C2f { c_out, .. } => c_out,
            LayerSpec::ClassifyHead { num_classes, .. } => num_classes,
        }
    }

    /// Every convolution inside the layer as `(name suffix, c_in, c_out, kernel, stride)`.
    pub fn convs(&self) -> Vec<(String, usize, usize, usize, usize)> {
        match *self {
            LayerSpec::ConvBlock {
                c_in,
                c_out,
                kernel,
                stride,
            } => vec![(String::new(), c_in, c_out, kernel, stride)],
            LayerSpec::C2f {
                c_in,
                c_out,
                repeats,
                ..
            } => {
                let c = c_out / 2;
                let mut v = vec![(".cv1".to_string(), c_in, 2 * c, 1, 1)];
                for j in 0..repeats {
                    v.push((format!(".m.{j}.cv1"), c, c, 3, 1));
                    v.push((format!(".m.{j}.cv2"), c, c, 3, 1));
                }
                v.push((".cv2".to_string(), (2 + repeats) * c, c_out, 1, 1));
                v
            }
            LayerSpec::ClassifyHead { c_in, hidden, .. } => {
                vec![(".conv".to_string(), c_in, hidden, 1, 1)]
            }
        }
    }
}

/// Whether a stored tensor is a trainable parameter or a running statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRole {
    Parameter,
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpectedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub role: TensorRole,
}

impl ExpectedTensor {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Name prefix of layer `index`.
pub fn layer_prefix(index: usize, layer: &LayerSpec) -> String {
    match layer {
        LayerSpec::ClassifyHead { .. } => "head".to_string(),
        _ => format!("backbone.{index}"),
    }
}

pub const HEAD_LINEAR_WEIGHT: &str = "head.linear.weight";
pub const HEAD_LINEAR_BIAS: &str = "head.linear.bias";

/// Tensors for a ConvBlock rooted at `prefix`.
pub(crate) fn conv_block_tensors(prefix: &str, c_in: usize, c_out: usize, k: usize) -> Vec<ExpectedTensor> {
    let t = |suffix: &str, dims: Vec<usize>, role| ExpectedTensor {
        name: format!("{prefix}.{suffix}"),
        dims,
        role,
    };
    vec![
        t("conv.weight", vec![c_out, c_in, k, k], TensorRole::Parameter),
        t("bn.weight", vec![c_out], TensorRole::Parameter),
        t("bn.bias", vec![c_out], TensorRole::Parameter),
        t("bn.running_mean", vec![c_out], TensorRole::Buffer),
        t("bn.running_var", vec![c_out], TensorRole::Buffer),
    ]
}

/// All tensors layer `index` binds, in a stable order.
pub fn layer_tensors(index: usize, layer: &LayerSpec) -> Vec<ExpectedTensor> {
    let prefix = layer_prefix(index, layer);
    let mut out: Vec<ExpectedTensor> = layer
        .convs()
        .into_iter()
        .flat_map(|(suffix, ci, co, k, _)| conv_block_tensors(&format!("{prefix}{suffix}"), ci, co, k))
        .collect();
    if let LayerSpec::ClassifyHead {
        hidden, num_classes, ..
    } = *layer
    {
        out.push(ExpectedTensor {
            name: HEAD_LINEAR_WEIGHT.into(),
            dims: vec![num_classes, hidden],
            role: TensorRole::Parameter,
        });
        out.push(ExpectedTensor {
            name: HEAD_LINEAR_BIAS.into(),
            dims: vec![num_classes],
            role: TensorRole::Parameter,
        });
    }
    out
}

/// The classification layer table for `config`.
///
/// The n-variant table is spelled out; other multiples follow the usual
/// round-to-multiple-of-8 channel and rounded-repeat rules on the
/// (64, 128, 256, 512, 1024) / (3, 6, 6, 3) base.
pub fn yolov8_cls_layers(config: &ModelConfig) -> Vec<LayerSpec> {
    let nc = config.num_classes;
    if config.is_n_variant() {
        return vec![
            LayerSpec::conv(3, 16, 3, 2),
            LayerSpec::conv(16, 32, 3, 2),
            LayerSpec::c2f(32, 32, 1),
            LayerSpec::conv(32, 64, 3, 2),
            LayerSpec::c2f(64, 64, 2),
            LayerSpec::conv(64, 128, 3, 2),
            LayerSpec::c2f(128, 128, 2),
            LayerSpec::conv(128, 256, 3, 2),
            LayerSpec::c2f(256, 256, 1),
            LayerSpec::head(256, nc),
        ];
    }
    let width = |c: usize| ((c as f32 * config.width_multiple / 8.0).ceil() as usize * 8).max(8);
    let depth = |n: usize| ((n as f32 * config.depth_multiple).round() as usize).max(1);
    let ch = [64, 128, 256, 512, 1024].map(width);
    let reps = [3, 6, 6, 3].map(depth);
    let mut layers = vec![
        LayerSpec::conv(3, ch[0], 3, 2),
        LayerSpec::conv(ch[0], ch[1], 3, 2),
    ];
    for stage in 0..4 {
        let c = ch[stage + 1];
        if stage > 0 {
            layers.push(LayerSpec::conv(ch[stage], c, 3, 2));
        }
        layers.push(LayerSpec::c2f(c, c, reps[stage]));
    }
    layers.push(LayerSpec::head(ch[4], nc));
    layers
}

/// Checks that consecutive layers agree on channel counts and only the last is a head.
pub fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    for (i, pair) in layers.windows(2).enumerate() {
        if matches!(pair[0], LayerSpec::ClassifyHead { .. }) {
            return Err(Error::Config(format!("layer {i}: classify head must be last")));
        }
        if pair[0].c_out() != pair[1].c_in() {
            return Err(Error::Config(format!(
                "layer {}: expects {} input channels but layer {i} produces {}",
                i + 1,
                pair[1].c_in(),
                pair[0].c_out()
            )));
        }
    }
    for (i, layer) in layers.iter().enumerate() {
        match *layer {
            LayerSpec::ConvBlock { kernel, stride, .. } if kernel % 2 == 0 || stride == 0 => {
                return Err(Error::Config(format!(
                    "layer {i}: kernel must be odd and stride positive"
                )));
            }
            LayerSpec::C2f { c_out, .. } if c_out % 2 != 0 => {
                return Err(Error::Config(format!("layer {i}: C2f needs even channels")));
            }
            _ => {}
        }
    }
    Ok(())
}

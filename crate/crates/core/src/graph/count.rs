//! Parameter and multiply-accumulate accounting from the layer table alone.

use serde::Serialize;

use super::spec::{layer_prefix, layer_tensors, LayerSpec, TensorRole};
use super::Model;

/// Trainable parameters: conv weights, BN gamma/beta, linear weight and bias.
/// Running statistics are not counted.
pub fn count_params(model: &Model) -> u64 {
    model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| layer_params(i, l))
        .sum()
}

fn layer_params(index: usize, layer: &LayerSpec) -> u64 {
    layer_tensors(index, layer)
        .iter()
        .filter(|t| t.role == TensorRole::Parameter)
        .map(|t| t.numel() as u64)
        .sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MacCount {
    /// Conv and linear multiply-accumulates.
    pub macs: u64,
    /// `2 · macs`.
    pub flops: u64,
    /// Elementwise work outside the headline: BN, SiLU, residual adds, pooling.
    pub aux_ops: u64,
}

impl std::ops::AddAssign for MacCount {
    fn add_assign(&mut self, o: Self) {
        self.macs += o.macs;
        self.flops += o.flops;
        self.aux_ops += o.aux_ops;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerSummary {
    pub index: usize,
    pub name: String,
    #[serde(flatten)]
    pub spec: LayerSpec,
    pub params: u64,
    pub out_h: usize,
    pub out_w: usize,
    #[serde(flatten)]
    pub cost: MacCount,
}

fn conv_out(len: usize, k: usize, stride: usize) -> usize {
    (len + 2 * (k / 2) - k) / stride + 1
}

/// Cost of one layer on an `h × w` input; returns the output extent too.
fn layer_cost(layer: &LayerSpec, h: usize, w: usize) -> (MacCount, usize, usize) {
    let mut cost = MacCount::default();
    let (mut oh, mut ow) = (h, w);
    for (_, ci, co, k, stride) in layer.convs() {
        let (ch, cw) = (conv_out(h, k, stride), conv_out(w, k, stride));
        let sites = (co * ch * cw) as u64;
        cost.macs += (k * k * ci) as u64 * sites;
        // BN and SiLU, one op per output element each.
        cost.aux_ops += 2 * sites;
        (oh, ow) = (ch, cw);
    }
    match *layer {
        LayerSpec::C2f {
            c_out,
            repeats,
            shortcut: true,
            ..
        } => cost.aux_ops += (repeats * (c_out / 2) * h * w) as u64,
        LayerSpec::ClassifyHead {
            hidden, num_classes, ..
        } => {
            cost.aux_ops += (hidden * oh * ow) as u64;
            cost.macs += (hidden * num_classes) as u64;
            (oh, ow) = (1, 1);
        }
        _ => {}
    }
    cost.flops = 2 * cost.macs;
    (cost, oh, ow)
}

/// Per-layer parameters, output extents and costs for a square `input_size` input.
pub fn layer_summary(model: &Model, input_size: usize) -> Vec<LayerSummary> {
    let (mut h, mut w) = (input_size, input_size);
    model
        .layers()
        .iter()
        .enumerate()
        .map(|(index, layer)| {
            let (cost, oh, ow) = layer_cost(layer, h, w);
            (h, w) = (oh, ow);
            LayerSummary {
                index,
                name: layer_prefix(index, layer),
                spec: *layer,
                params: layer_params(index, layer),
                out_h: oh,
                out_w: ow,
                cost,
            }
        })
        .collect()
}

pub fn count_macs(model: &Model, input_size: usize) -> MacCount {
    let mut total = MacCount::default();
    for s in layer_summary(model, input_size) {
        total += s.cost;
    }
    total
}

/// FLOPs as commonly published for this model family: everything counted at a
/// 32×32 input, then scaled by `(input_size / 32)²`. The scaling also applies to
/// the input-size-independent linear layer, so this overstates the true cost.
pub fn upstream_scaled_flops(model: &Model, input_size: usize) -> f64 {
    let at_stride = count_macs(model, 32).flops as f64;
    at_stride * (input_size as f64 / 32.0).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_yolov8_cls, ModelConfig};

    fn model(layers: Vec<LayerSpec>) -> Model {
        Model::from_layers(ModelConfig::yolov8n_cls(10), layers).unwrap()
    }

    #[test]
    fn single_conv_block() {
        assert_eq!(count_params(&model(vec![LayerSpec::conv(3, 16, 3, 2)])), 464);
    }

    #[test]
    fn empty_graph() {
        let m = model(vec![]);
        assert_eq!(count_params(&m), 0);
        assert_eq!(count_macs(&m, 224), MacCount::default());
    }

    #[test]
    fn linear_contribution() {
        let p2 = count_params(&build_yolov8_cls(ModelConfig::yolov8n_cls(2)).unwrap());
        let p3 = count_params(&build_yolov8_cls(ModelConfig::yolov8n_cls(3)).unwrap());
        assert_eq!(p3 - p2, 1281);
        let head = model(vec![LayerSpec::head(4, 2)]);
        // 1×1 ConvBlock 4→1280 (5120 + 2560) plus the 2-class linear layer.
        assert_eq!(count_params(&head), 5120 + 2560 + 2562);
    }

    #[test]
    fn pointwise_head_conv_macs() {
        let m = model(vec![LayerSpec::conv(256, 1280, 1, 1)]);
        assert_eq!(count_macs(&m, 7).macs, 16_056_320);
        assert_eq!(count_macs(&m, 7).flops, 2 * 16_056_320);
    }

    #[test]
    fn spatial_bookkeeping() {
        let m = build_yolov8_cls(ModelConfig::yolov8n_cls(10)).unwrap();
        let s = layer_summary(&m, 224);
        let dims: Vec<usize> = s.iter().map(|l| l.out_h).collect();
        assert_eq!(dims, vec![112, 56, 56, 28, 28, 14, 14, 7, 7, 1]);
    }
}

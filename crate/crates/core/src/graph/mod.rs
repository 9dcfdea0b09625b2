//! The yolov8n-cls graph: construction, weight binding and forward execution.

mod count;
mod spec;

pub use count::{count_macs, count_params, layer_summary, upstream_scaled_flops, LayerSummary, MacCount};
pub use spec::{
    layer_prefix, layer_tensors, validate_layers, yolov8_cls_layers, ExpectedTensor, LayerSpec,
    ModelConfig, TensorRole, HEAD_HIDDEN, HEAD_LINEAR_BIAS, HEAD_LINEAR_WEIGHT,
};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{BindError, Error, Result};
use crate::ops::{self, BnParams, ConvParams};
use crate::tensor::{Shape, Tensor};
use crate::weights::{Metadata, TensorRecord, WeightStore};

/// A conv with its batch norm folded in; SiLU follows.
#[derive(Clone, Debug)]
struct FusedConv {
    params: ConvParams,
}

impl FusedConv {
    fn run(&self, x: &Tensor, threads: usize) -> Result<Tensor> {
        let mut y = ops::conv2d_lowered_threaded(x, &self.params, threads)?;
        ops::silu_in_place(&mut y);
        Ok(y)
    }
}

#[derive(Clone, Debug)]
enum Compiled {
    Conv(FusedConv),
    C2f {
        cv1: FusedConv,
        bottlenecks: Vec<(FusedConv, FusedConv)>,
        cv2: FusedConv,
        hidden: usize,
        shortcut: bool,
    },
    Head {
        conv: FusedConv,
        weight: Tensor,
        bias: Vec<f32>,
    },
}

/// Layer graph plus, once bound, inference-ready (BN-folded) weights.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    layers: Vec<LayerSpec>,
    bound: Option<Vec<Compiled>>,
}

/// Builds the classification graph for `config` (unbound).
pub fn build_yolov8_cls(config: ModelConfig) -> Result<Model> {
    config.validate()?;
    Model::from_layers(config, yolov8_cls_layers(&config))
}

impl Model {
    /// A graph over an arbitrary, channel-consistent layer list.
    pub fn from_layers(config: ModelConfig, layers: Vec<LayerSpec>) -> Result<Self> {
        validate_layers(&layers)?;
        Ok(Model {
            config,
            layers,
            bound: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn is_bound(&self) -> bool {
        self.bound.is_some()
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.layers.last()? {
            LayerSpec::ClassifyHead { num_classes, .. } => Some(*num_classes),
            _ => None,
        }
    }

    /// Every tensor the graph binds, in layer order.
    pub fn expected_tensors(&self) -> Vec<ExpectedTensor> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| layer_tensors(i, l))
            .collect()
    }

    /// Metadata describing this graph, for new weight stores.
    pub fn metadata(&self) -> Metadata {
        Metadata {
            nc: self.num_classes().unwrap_or(0),
            ..Metadata::default()
        }
    }

    /// Compares `store` against the expected tensor set without binding.
    pub fn check_store(&self, store: &WeightStore) -> Result<(), BindError> {
        let expected: BTreeMap<String, Vec<usize>> = self
            .expected_tensors()
            .into_iter()
            .map(|t| (t.name, t.dims))
            .collect();
        let mut report = BindError::default();
        for (name, dims) in &expected {
            match store.get(name) {
                None => report.missing.push(name.clone()),
                Some(rec) if &rec.dims != dims => {
                    report.wrong_shape.push((name.clone(), dims.clone(), rec.dims.clone()))
                }
                Some(_) => {}
            }
        }
        report.extra = store
            .names()
            .filter(|n| !expected.contains_key(*n))
            .map(str::to_owned)
            .collect();
        if report.is_empty() {
            Ok(())
        } else {
            Err(report)
        }
    }

    /// Binds weights, folding each batch norm into its convolution.
    pub fn bind(&mut self, store: &WeightStore) -> Result<()> {
        self.check_store(store)?;
        let eps = store.metadata.bn_eps;
        let tensor = |name: &str| -> &TensorRecord { store.get(name).expect("checked by check_store") };
        let fused = |prefix: &str, stride: usize| -> Result<FusedConv> {
            let w = tensor(&format!("{prefix}.conv.weight"));
            let shape = Shape::new(w.dims[0], w.dims[1], w.dims[2], w.dims[3]);
            let conv = ConvParams::new(Tensor::new(shape, w.values.clone())?, None, stride, w.dims[2] / 2)?;
            let bn = BnParams::new(
                tensor(&format!("{prefix}.bn.weight")).values.clone(),
                tensor(&format!("{prefix}.bn.bias")).values.clone(),
                tensor(&format!("{prefix}.bn.running_mean")).values.clone(),
                tensor(&format!("{prefix}.bn.running_var")).values.clone(),
                eps,
            )?;
            Ok(FusedConv {
                params: ops::fold_bn(&conv, &bn)?,
            })
        };

        let mut compiled = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let prefix = layer_prefix(i, layer);
            compiled.push(match *layer {
                LayerSpec::ConvBlock { stride, .. } => Compiled::Conv(fused(&prefix, stride)?),
                LayerSpec::C2f {
                    c_out,
                    repeats,
                    shortcut,
                    ..
                } => Compiled::C2f {
                    cv1: fused(&format!("{prefix}.cv1"), 1)?,
                    bottlenecks: (0..repeats)
                        .map(|j| {
                            Ok((
                                fused(&format!("{prefix}.m.{j}.cv1"), 1)?,
                                fused(&format!("{prefix}.m.{j}.cv2"), 1)?,
                            ))
                        })
                        .collect::<Result<_>>()?,
                    cv2: fused(&format!("{prefix}.cv2"), 1)?,
                    hidden: c_out / 2,
                    shortcut,
                },
                LayerSpec::ClassifyHead {
                    hidden, num_classes, ..
                } => Compiled::Head {
                    conv: fused(&format!("{prefix}.conv"), 1)?,
                    weight: Tensor::new(
                        Shape::new(num_classes, hidden, 1, 1),
                        tensor(HEAD_LINEAR_WEIGHT).values.clone(),
                    )?,
                    bias: tensor(HEAD_LINEAR_BIAS).values.clone(),
                },
            });
        }
        self.bound = Some(compiled);
        Ok(())
    }

    /// Class logits, one row per batch item.
    pub fn forward(&self, batch: &Tensor) -> Result<Vec<Vec<f32>>> {
        self.forward_threaded(batch, 1)
    }

    /// [`Model::forward`] with convolutions split across `threads` workers.
    pub fn forward_threaded(&self, batch: &Tensor, threads: usize) -> Result<Vec<Vec<f32>>> {
        let (pooled, head) = self.run_to_pool(batch, threads)?;
        let (weight, bias) = head.ok_or_else(|| Error::Config("graph has no classify head".into()))?;
        (0..pooled.shape().n)
            .map(|n| ops::linear(pooled.item(n), weight, bias))
            .collect()
    }

    /// Pooled head features (the linear layer's input), one row per batch item.
    pub fn features(&self, batch: &Tensor) -> Result<Vec<Vec<f32>>> {
        let (pooled, _) = self.run_to_pool(batch, 1)?;
        Ok((0..pooled.shape().n).map(|n| pooled.item(n).to_vec()).collect())
    }

    /// Current head linear layer `(weight (nc × hidden), bias)`.
    pub fn head_linear(&self) -> Option<(&Tensor, &[f32])> {
        self.bound.as_ref()?.iter().find_map(|c| match c {
            Compiled::Head { weight, bias, .. } => Some((weight, bias.as_slice())),
            _ => None,
        })
    }

    /// Replaces the head linear layer of a bound model.
    pub fn set_head_linear(&mut self, weight: Tensor, bias: Vec<f32>) -> Result<()> {
        let compiled = self.bound.as_mut().ok_or(Error::Unbound)?;
        for c in compiled.iter_mut() {
            if let Compiled::Head {
                weight: w, bias: b, ..
            } = c
            {
                if weight.shape() != w.shape() || bias.len() != b.len() {
                    return Err(Error::shape("set_head_linear", w.shape(), weight.shape()));
                }
                *w = weight;
                *b = bias;
                return Ok(());
            }
        }
        Err(Error::Config("graph has no classify head".into()))
    }

    #[allow(clippy::type_complexity)]
    fn run_to_pool(&self, batch: &Tensor, threads: usize) -> Result<(Tensor, Option<(&Tensor, &Vec<f32>)>)> {
        let compiled = self.bound.as_ref().ok_or(Error::Unbound)?;
        let s = batch.shape();
        let c_in = self.layers.first().map_or(0, LayerSpec::c_in);
        if s.c != c_in || s.h == 0 || s.w == 0 || s.n == 0 {
            return Err(Error::shape(
                "forward",
                format!("(n ≥ 1, {c_in}, h ≥ 1, w ≥ 1)"),
                s,
            ));
        }
        let mut x = batch.clone();
        for layer in compiled {
            match layer {
                Compiled::Conv(conv) => x = conv.run(&x, threads)?,
                Compiled::C2f {
                    cv1,
                    bottlenecks,
                    cv2,
                    hidden,
                    shortcut,
                } => {
                    let y = cv1.run(&x, threads)?;
                    let mut branches = ops::split_channels(&y, &[*hidden, *hidden])?;
                    for (a, b) in bottlenecks {
                        let last = branches.last().expect("two halves");
                        let t = b.run(&a.run(last, threads)?, threads)?;
                        let next = if *shortcut { ops::add(last, &t)? } else { t };
                        branches.push(next);
                    }
                    let refs: Vec<&Tensor> = branches.iter().collect();
                    x = cv2.run(&ops::concat_channels(&refs)?, threads)?;
                }
                Compiled::Head { conv, weight, bias } => {
                    let pooled = ops::global_avg_pool(&conv.run(&x, threads)?)?;
                    return Ok((pooled, Some((weight, bias))));
                }
            }
        }
        Ok((ops::global_avg_pool(&x)?, None))
    }

    /// A complete store of seeded random weights: He-uniform convolutions,
    /// mildly perturbed batch-norm statistics, small uniform head.
    pub fn random_weights(&self, seed: u64) -> WeightStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = WeightStore::new(self.metadata());
        for t in self.expected_tensors() {
            let n = t.numel();
            let values: Vec<f32> = if t.name.ends_with("conv.weight") {
                let fan_in: usize = t.dims[1..].iter().product();
                let bound = (6.0 / fan_in as f32).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            } else if t.name.ends_with("bn.weight") {
                (0..n).map(|_| rng.random_range(0.8..1.2)).collect()
            } else if t.name.ends_with("bn.running_var") {
                (0..n).map(|_| rng.random_range(0.5..1.5)).collect()
            } else if t.name.ends_with("bn.bias") || t.name.ends_with("bn.running_mean") {
                (0..n).map(|_| rng.random_range(-0.1..0.1)).collect()
            } else {
                let bound = 1.0 / (*t.dims.last().unwrap_or(&1) as f32).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            store.set(t.name, TensorRecord::f32(t.dims, values));
        }
        store
    }

    /// All weights zero, running variances one.
    pub fn zero_weights(&self) -> WeightStore {
        let mut store = WeightStore::new(self.metadata());
        for t in self.expected_tensors() {
            let fill = if t.name.ends_with("running_var") { 1.0 } else { 0.0 };
            let n = t.numel();
            store.set(t.name, TensorRecord::f32(t.dims, vec![fill; n]));
        }
        store
    }
}

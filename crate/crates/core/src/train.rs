//! Head-only fine-tuning: frozen backbone features, trainable final linear layer,
//! categorical cross-entropy and plain SGD.
//!
//! The loss is `−log softmax(z)[y]` averaged over each mini-batch, so the
//! learning rate does not depend on the batch size.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::{self, Sample};
use crate::error::{Error, Result};
use crate::eval::in_top_k;
use crate::graph::{Model, HEAD_LINEAR_BIAS, HEAD_LINEAR_WEIGHT};
use crate::parallel;
use crate::tensor::{Shape, Tensor};
use crate::weights::{DType, Metadata, TensorRecord, WeightStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            epochs: 10,
            batch_size: 64,
            seed: 42,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || self.epochs == 0 || self.batch_size == 0 || !(self.l2 >= 0.0) {
            return Err(Error::Config(format!(
                "need lr ≥ 0, epochs ≥ 1, batch_size ≥ 1, l2 ≥ 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub top1: f64,
    pub top5: f64,
}

/// A feature vector with its class.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f32>,
    pub label: usize,
}

/// Final linear layer, `weight` row-major `(classes × dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    pub classes: usize,
    pub dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl HeadWeights {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        HeadWeights {
            classes,
            dim,
            weight: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
        }
    }

    pub fn from_model(model: &Model) -> Result<Self> {
        let (w, b) = model.head_linear().ok_or(Error::Unbound)?;
        let s = w.shape();
        Ok(HeadWeights {
            classes: s.n,
            dim: s.item(),
            weight: w.data().to_vec(),
            bias: b.to_vec(),
        })
    }

    pub fn from_store(store: &WeightStore) -> Result<Self> {
        let missing = |n: &str| Error::Config(format!("weight file has no {n}"));
        let w = store.get(HEAD_LINEAR_WEIGHT).ok_or_else(|| missing(HEAD_LINEAR_WEIGHT))?;
        let b = store.get(HEAD_LINEAR_BIAS).ok_or_else(|| missing(HEAD_LINEAR_BIAS))?;
        if w.dims.len() != 2 || b.dims != [w.dims[0]] {
            return Err(Error::shape("head weights", "(nc, d) and (nc)", format!("{:?}/{:?}", w.dims, b.dims)));
        }
        Ok(HeadWeights {
            classes: w.dims[0],
            dim: w.dims[1],
            weight: w.values.clone(),
            bias: b.values.clone(),
        })
    }

    /// A store holding only the head tensors.
    pub fn to_store(&self, metadata: Metadata) -> WeightStore {
        let mut store = WeightStore::new(metadata);
        self.write_into(&mut store);
        store
    }

    /// Replaces the head tensors of a full model store.
    pub fn write_into(&self, store: &mut WeightStore) {
        store.set(HEAD_LINEAR_WEIGHT, TensorRecord::f32(vec![self.classes, self.dim], self.weight.clone()));
        store.set(HEAD_LINEAR_BIAS, TensorRecord::f32(vec![self.classes], self.bias.clone()));
    }

    pub fn apply_to(&self, model: &mut Model) -> Result<()> {
        let w = Tensor::new(Shape::new(self.classes, self.dim, 1, 1), self.weight.clone())?;
        model.set_head_linear(w, self.bias.clone())
    }

    pub fn logits(&self, features: &[f32]) -> Result<Vec<f32>> {
        if features.len() != self.dim {
            return Err(Error::shape("head logits", self.dim, features.len()));
        }
        Ok(self
            .weight
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(features).map(|(w, x)| w * x).sum::<f32>() + b)
            .collect())
    }
}

/// Backbone plus the head's pointwise ConvBlock and pooling, flattened.
pub fn extract_features(model: &Model, input: &Tensor) -> Result<Vec<f32>> {
    if input.shape().n != 1 {
        return Err(Error::shape("extract_features", "batch of 1", input.shape()));
    }
    Ok(model.features(input)?.remove(0))
}

/// `−log softmax(logits)[class]` via log-sum-exp.
pub fn cross_entropy(logits: &[f32], class: usize) -> Result<f64> {
    if class >= logits.len() {
        return Err(Error::ClassOutOfRange {
            class,
            num_classes: logits.len(),
        });
    }
    Ok(cross_entropy_f64(&logits.iter().map(|&v| v as f64).collect::<Vec<_>>(), class))
}

pub(crate) fn cross_entropy_f64(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[class];
    // Rounding can push a saturated loss a hair below zero; NaN passes through.
    if loss < 0.0 {
        0.0
    } else {
        loss
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Gradient of the single-example loss (plus `l2·‖W‖²` when `l2 > 0`).
pub fn grad_head(features: &[f32], head: &HeadWeights, class: usize, l2: f32) -> Result<HeadGrad> {
    let logits = head.logits(features)?;
    if class >= head.classes {
        return Err(Error::ClassOutOfRange {
            class,
            num_classes: head.classes,
        });
    }
    let dlogits = dlogits(&logits, class);
    let mut weight = Vec::with_capacity(head.weight.len());
    for (j, &g) in dlogits.iter().enumerate() {
        let row = &head.weight[j * head.dim..(j + 1) * head.dim];
        weight.extend(features.iter().zip(row).map(|(&x, &w)| g * x + 2.0 * l2 * w));
    }
    Ok(HeadGrad {
        weight,
        bias: dlogits,
    })
}

/// `softmax(z) − onehot(class)`, computed in f64.
fn dlogits(logits: &[f32], class: usize) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&z| (z as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter()
        .enumerate()
        .map(|(j, e)| (e / sum - (j == class) as u8 as f64) as f32)
        .collect()
}

/// `θ ← θ − η·grad`.
pub fn sgd_step(theta: &mut [f32], grad: &[f32], lr: f32) -> Result<()> {
    if theta.len() != grad.len() {
        return Err(Error::shape("sgd_step", theta.len(), grad.len()));
    }
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= lr * g;
    }
    Ok(())
}

/// Mean loss, top-1 and top-k over a set.
pub fn evaluate_head(head: &HeadWeights, set: &[Example]) -> Result<(f64, f64, f64)> {
    if set.is_empty() {
        return Err(Error::Empty("evaluate_head"));
    }
    let k = 5.min(head.classes);
    let (mut loss, mut top1, mut topk) = (0.0, 0usize, 0usize);
    for ex in set {
        let logits = head.logits(&ex.features)?;
        loss += cross_entropy(&logits, ex.label)?;
        top1 += in_top_k(&logits, ex.label, 1) as usize;
        topk += in_top_k(&logits, ex.label, k) as usize;
    }
    let n = set.len() as f64;
    Ok((loss / n, top1 as f64 / n, topk as f64 / n))
}

/// Mini-batch SGD over a seeded shuffle of `train`. After every epoch the
/// full-set training loss and the validation loss/top-1/top-5 are recorded.
pub fn train_head(
    init: HeadWeights,
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
) -> Result<(HeadWeights, Vec<EpochRecord>)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("train_head"));
    }
    let mut head = init;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut gw = vec![0.0f32; head.weight.len()];
            let mut gb = vec![0.0f32; head.classes];
            for &i in batch {
                let g = grad_head(&train[i].features, &head, train[i].label, 0.0)?;
                gw.iter_mut().zip(&g.weight).for_each(|(a, b)| *a += b);
                gb.iter_mut().zip(&g.bias).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / batch.len() as f32;
            for (g, w) in gw.iter_mut().zip(&head.weight) {
                *g = *g * inv + 2.0 * config.l2 * w;
            }
            gb.iter_mut().for_each(|g| *g *= inv);
            sgd_step(&mut head.weight, &gw, config.lr)?;
            sgd_step(&mut head.bias, &gb, config.lr)?;
        }
        let (train_loss, _, _) = evaluate_head(&head, train)?;
        let (val_loss, top1, top5) = evaluate_head(&head, val)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, lr: config.lr });
        }
        log::info!("epoch {epoch}: train_loss {train_loss:.5} val_loss {val_loss:.5} top1 {top1:.4} top5 {top5:.4}");
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            top1,
            top5,
        });
    }
    Ok((head, records))
}

pub fn write_epoch_csv(path: impl AsRef<Path>, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Pooled features on disk, one file per backbone checksum, keyed by sample path.
#[derive(Debug)]
pub struct FeatureCache {
    path: PathBuf,
    store: WeightStore,
    dirty: bool,
}

impl FeatureCache {
    /// Opens (or starts) the cache for weights whose backbone checksum is `checksum`.
    pub fn open(dir: impl AsRef<Path>, checksum: u32) -> Result<Self> {
        std::fs::create_dir_all(dir.as_ref())?;
        let path = dir.as_ref().join(format!("features-{checksum:08x}.dwt"));
        let store = if path.is_file() {
            match WeightStore::load_file(&path) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("discarding unreadable feature cache {}: {e}", path.display());
                    Self::empty_store()
                }
            }
        } else {
            Self::empty_store()
        };
        Ok(FeatureCache {
            path,
            store,
            dirty: false,
        })
    }

    fn empty_store() -> WeightStore {
        WeightStore::new(Metadata {
            arch: "feature-cache".into(),
            nc: 0,
            ..Metadata::default()
        })
    }

    /// Checksum identifying the backbone of `store` (the head linear layer is ignored).
    pub fn checksum(store: &WeightStore) -> u32 {
        store.checksum_excluding(&["head.linear."])
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.store.get(key).map(|r| r.values.as_slice())
    }

    pub fn insert(&mut self, key: &str, features: Vec<f32>) {
        self.store.set(key, TensorRecord::f32(vec![features.len()], features));
        self.dirty = true;
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn flush(&mut self) -> Result<()> {
        if self.dirty {
            self.store.save_file(&self.path, DType::F32)?;
            self.dirty = false;
        }
        Ok(())
    }
}

/// Features for every sample, reusing and filling `cache`. Samples that fail to
/// load are returned separately with the reason.
pub fn extract_dataset(
    model: &Model,
    root: &Path,
    samples: &[Sample],
    workers: usize,
    mut cache: Option<&mut FeatureCache>,
) -> Result<(Vec<Example>, Vec<(String, String)>)> {
    let todo: Vec<&Sample> = samples
        .iter()
        .filter(|s| cache.as_ref().is_none_or(|c| c.get(&s.path).is_none()))
        .collect();
    if !todo.is_empty() {
        log::info!("extracting features for {} of {} samples", todo.len(), samples.len());
    }
    let fresh = parallel::map_ordered(&todo, workers, |s| {
        let input = dataset::load_image(root.join(&s.path), dataset::INPUT_SIZE)?;
        extract_features(model, &input)
    });
    let mut computed = std::collections::HashMap::new();
    let mut failures = Vec::new();
    for (s, r) in todo.iter().zip(fresh) {
        match r {
            Ok(f) => {
                if let Some(c) = cache.as_deref_mut() {
                    c.insert(&s.path, f.clone());
                }
                computed.insert(s.path.as_str(), f);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", s.path);
                failures.push((s.path.clone(), e.to_string()));
            }
        }
    }
    if let Some(c) = cache.as_deref_mut() {
        c.flush()?;
    }
    let examples = samples
        .iter()
        .filter_map(|s| {
            let features = computed
                .remove(s.path.as_str())
                .or_else(|| cache.as_ref().and_then(|c| c.get(&s.path)).map(<[f32]>::to_vec))?;
            Some(Example {
                features,
                label: s.class_id,
            })
        })
        .collect();
    Ok((examples, failures))
}

pub fn write_head(path: impl AsRef<Path>, head: &HeadWeights, metadata: Metadata) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&crate::weights::save(&head.to_store(metadata), DType::F32)?)?;
    Ok(())
}

//! Named weight tensors and the DWT container.
//!
//! A DWT stream is laid out as (all integers little-endian):
//!
//! ```text
//! "DWT1" | version u16 | meta_len u32 | meta JSON (UTF-8)
//! | record_count u32
//! | { name_len u16 | name | dtype u8 (0=f32, 1=f16) | ndim u8 | dims u32×ndim | payload }*
//! | crc32 of every preceding byte
//! ```

mod dwt;
pub mod half;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result};

pub use dwt::{load, model_size_bytes, save, FORMAT_VERSION, MAGIC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F16,
}

impl DType {
    pub const fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F16 => 1,
        }
    }

    pub const fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F16),
            _ => None,
        }
    }

    pub const fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }
}

impl std::str::FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "f32" => Ok(DType::F32),
            "f16" => Ok(DType::F16),
            other => Err(format!("unknown dtype {other:?} (expected f32 or f16)")),
        }
    }
}

/// One stored tensor. Values are held as `f32`; `dtype` records the precision
/// they were read at.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl TensorRecord {
    pub fn f32(dims: Vec<usize>, values: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        TensorRecord {
            dtype: DType::F32,
            dims,
            values,
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub arch: String,
    pub nc: usize,
    pub bn_eps: f32,
    pub normalization: String,
}

impl Default for Metadata {
    fn default() -> Self {
        Metadata {
            arch: "yolov8n-cls".into(),
            nc: 10,
            bn_eps: 1e-3,
            normalization: "rgb/255".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    pub metadata: Metadata,
    records: BTreeMap<String, TensorRecord>,
}

impl WeightStore {
    pub fn new(metadata: Metadata) -> Self {
        WeightStore {
            metadata,
            records: BTreeMap::new(),
        }
    }

    /// Inserts a record, rejecting duplicate names.
    pub fn insert(&mut self, name: impl Into<String>, record: TensorRecord) -> Result<(), FormatError> {
        let name = name.into();
        if self.records.contains_key(&name) {
            return Err(FormatError::DuplicateName(name));
        }
        self.records.insert(name, record);
        Ok(())
    }

    /// Inserts or replaces a record.
    pub fn set(&mut self, name: impl Into<String>, record: TensorRecord) {
        self.records.insert(name.into(), record);
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.records.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<TensorRecord> {
        self.records.remove(name)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorRecord)> {
        self.records.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn total_elements(&self) -> usize {
        self.records.values().map(TensorRecord::numel).sum()
    }

    /// CRC32 over names, dims and f32 values of every record whose name does not
    /// start with one of `exclude_prefixes`.
    pub fn checksum_excluding(&self, exclude_prefixes: &[&str]) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for (name, rec) in self.iter() {
            if exclude_prefixes.iter().any(|p| name.starts_with(p)) {
                continue;
            }
            h.update(name.as_bytes());
            for d in &rec.dims {
                h.update(&(*d as u64).to_le_bytes());
            }
            for v in &rec.values {
                h.update(&v.to_le_bytes());
            }
        }
        h.finalize()
    }

    pub fn save_file(&self, path: impl AsRef<Path>, dtype: DType) -> Result<()> {
        std::fs::write(path, save(self, dtype)?)?;
        Ok(())
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(load(&bytes)?)
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model weights are not bound")]
    Unbound,

    #[error("weight binding failed: {0}")]
    Binding(#[from] BindError),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("cannot decode image {path:?}: {reason}")]
    Image { path: Option<PathBuf>, reason: String },

    #[error("loss became non-finite at epoch {epoch} (learning rate {lr} too high?)")]
    NonFiniteLoss { epoch: usize, lr: f32 },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

/// Structural failures while decoding a DWT stream.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected \"DWT1\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads {supported})")]
    Version { found: u16, supported: u16 },

    #[error("truncated stream: {what} at offset {offset} needs {needed} bytes, {available} available")]
    Truncated {
        what: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("{0} unexpected trailing bytes after last record")]
    TrailingBytes(usize),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },

    #[error("metadata is not valid JSON: {0}")]
    Metadata(String),

    #[error("record {index}: name is not valid UTF-8")]
    Name { index: usize },

    #[error("record {index}: unknown dtype tag {tag}")]
    Dtype { index: usize, tag: u8 },

    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),

    #[error("tensor name {0:?} longer than 65535 bytes")]
    NameTooLong(String),

    #[error("tensor {name:?} has {ndim} dims, at most 255 supported")]
    TooManyDims { name: String, ndim: usize },
}

/// Mismatch between a weight store and the tensors a model graph expects.
#[derive(Debug, Default, Error, PartialEq, Eq)]
#[error("{}", self.describe())]
pub struct BindError {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
    /// (name, expected dims, actual dims)
    pub wrong_shape: Vec<(String, Vec<usize>, Vec<usize>)>,
}

impl BindError {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty() && self.wrong_shape.is_empty()
    }

    fn describe(&self) -> String {
        let mut parts = Vec::new();
        if !self.missing.is_empty() {
            parts.push(format!("missing [{}]", self.missing.join(", ")));
        }
        if !self.extra.is_empty() {
            parts.push(format!("extra [{}]", self.extra.join(", ")));
        }
        for (name, want, got) in &self.wrong_shape {
            parts.push(format!("{name}: expected {want:?}, got {got:?}"));
        }
        parts.join("; ")
    }
}

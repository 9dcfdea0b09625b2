//! Distracted-driver image classification with a YOLOv8n-cls network on the CPU.
//!
//! The crate covers the whole pipeline: NCHW tensors and kernels, the network
//! graph with parameter/FLOP accounting, the DWT weight container, dataset
//! ingestion and splitting, evaluation, latency benchmarking and head-only
//! fine-tuning.

pub mod bench;
pub mod dataset;
mod error;
pub mod eval;
pub mod graph;
pub mod ops;
pub mod parallel;
pub mod predict;
pub mod tensor;
pub mod train;
pub mod weights;

pub use dataset::{DatasetIndex, Sample, NUM_CLASSES};
pub use error::{BindError, Error, FormatError, Result};
pub use eval::{ConfusionMatrix, EvalReport, Metrics};
pub use graph::{build_yolov8_cls, LayerSpec, Model, ModelConfig};
pub use predict::Prediction;
pub use tensor::{Shape, Tensor};
pub use weights::{DType, Metadata, TensorRecord, WeightStore};

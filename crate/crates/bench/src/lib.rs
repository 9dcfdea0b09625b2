//! Shared fixtures for the criterion benches.

use drivecls::graph::build_yolov8_cls;
use drivecls::ops::ConvParams;
use drivecls::{Model, ModelConfig, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

pub fn random_conv(c_out: usize, c_in: usize, kernel: usize, stride: usize, seed: u64) -> ConvParams {
    let weight = random_tensor(Shape::new(c_out, c_in, kernel, kernel), seed);
    ConvParams::new(weight, None, stride, kernel / 2).expect("valid conv")
}

/// yolov8n-cls with seeded random weights, bound and ready for inference.
pub fn bound_model(num_classes: usize, seed: u64) -> Model {
    let mut model = build_yolov8_cls(ModelConfig::yolov8n_cls(num_classes)).expect("valid config");
    let store = model.random_weights(seed);
    model.bind(&store).expect("generated weights bind");
    model
}

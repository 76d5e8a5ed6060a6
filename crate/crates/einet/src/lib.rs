//! RGB-thermal video object detection with temporal proximity enhancement
//! and erasure-based multimodal fusion, plus a synthetic RGBT benchmark
//! generator and an AP/FPS evaluation harness.
//!
//! The numeric core is generic over the scalar type ([`Scalar`], `f32` or
//! `f64`); the shipped pipeline runs on `f32` (see the [`TensorF`] /
//! [`WeightsF`] aliases) while gradient checks instantiate `f64`.

pub mod autograd;
pub mod backbone;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod head;
pub mod neck;
pub mod net;
pub mod ops;
pub mod scalar;
pub mod tensor;
pub mod tpe;
pub mod train;
pub mod weights;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use weights::ModelWeights;

/// Concrete pipeline scalar.
pub type Real = f32;
/// Tensor of the shipped pipeline.
pub type TensorF = Tensor<f32>;
/// Weights registry of the shipped pipeline.
pub type WeightsF = ModelWeights<f32>;
/// Double-precision tensor used by oracles and gradient checks.
pub type TensorD = Tensor<f64>;

//! Inception-style convolutional network engine for food image recognition.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`rng`]: NCHW storage and seeded randomness.
//! * [`ops`]: forward/backward kernels for every layer type.
//! * [`net`]: Inception modules, the 22-layer network and its layer graph.
//! * [`train`]: SGD with momentum, checkpoints and fine-tuning.
//! * [`data`]: manifests, image preprocessing, bounding-box crops and splits.
//! * [`eval`]: top-k scoring, prediction and benchmarks.

pub mod data;
pub mod eval;
pub mod net;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use rng::Rng;
pub use tensor::{Real, Shape, Tensor, TensorError};

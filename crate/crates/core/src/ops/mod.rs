//! Forward and backward kernels for every layer type in the network.
//!
//! All kernels are pure functions of their arguments. Dropout additionally
//! consumes an [`Rng`](crate::rng::Rng). Sums are accumulated in `f64`
//! regardless of the storage type.

mod activation;
mod concat;
mod conv;
mod gemm;
mod linear;
mod loss;
mod pool;

pub use activation::{dropout, dropout_backward, relu, relu_backward, Mode};
pub use concat::{concat_backward, concat_channels};
pub use conv::{
    conv2d, conv2d_backward, conv2d_im2col, conv2d_im2col_backward, conv_output_dim, ConvAlgo,
    ConvParams,
};
pub use linear::{fully_connected, fully_connected_backward};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_backward};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, pool2d, pool2d_backward, pool_output_dim,
    PoolKind, PoolParams, Rounding,
};

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("data error: {0}")]
    Data(String),
}

impl From<TensorError> for OpError {
    fn from(e: TensorError) -> Self {
        OpError::Shape(e.to_string())
    }
}

/// Gradients produced by a layer's backward pass.
#[derive(Debug, Clone)]
pub struct LayerGrads<T: crate::tensor::Real> {
    pub d_input: Tensor<T>,
    pub d_weights: Option<Tensor<T>>,
    pub d_bias: Option<Vec<T>>,
}

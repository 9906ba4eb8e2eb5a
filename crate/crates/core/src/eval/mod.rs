//! Top-k evaluation, prediction and benchmarks.

mod bench;
mod report;
mod topk;

use thiserror::Error;

pub use bench::{bench_conv, bench_network, compare_conv, BenchOp, BenchReport, ConvComparison};
pub use report::{
    evaluate, predict, predict_tensor, ClassCounts, Classifier, EvalConfig, EvalOptions, EvalReport, Prediction, TopK,
};
pub use topk::{ranking, topk_hit};

use crate::data::DataError;
use crate::net::NetError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl From<TensorError> for EvalError {
    fn from(e: TensorError) -> Self {
        EvalError::Net(e.into())
    }
}

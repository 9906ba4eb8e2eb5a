//! Inception modules, the 22-layer network description, and the executable
//! layer graph.

mod graph;
mod spec;
mod topology;

pub use graph::{graph_backward, graph_forward, Gradients, Init, LayerGraph};
pub use spec::{
    build_deepfood22, param_layer_depth, HeadKind, InceptionConfig, NetworkSpec, StemLayer,
    CLASSIFIER, DEEPFOOD22_JSON, MINI2_JSON, PAPER_HEAD_CONV, PAPER_HEAD_FC,
};
pub use topology::{build_inception, GraphBuilder, Node, NodeId, NodeOp, ParamInfo, Topology};

use thiserror::Error;

use crate::ops::OpError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("graph state error: {0}")]
    State(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error(transparent)]
    Op(#[from] OpError),
}

impl From<TensorError> for NetError {
    fn from(e: TensorError) -> Self {
        NetError::Shape(e.to_string())
    }
}

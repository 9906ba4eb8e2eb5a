//! Layer graph construction with build-time shape inference.

use indexmap::IndexMap;

use super::spec::InceptionConfig;
use super::NetError;
use crate::ops::{ConvParams, PoolParams};
use crate::tensor::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub enum NodeOp {
    Input,
    /// Indices point into [`Topology::params`].
    Conv { params: ConvParams, weights: usize, bias: usize },
    Relu,
    Pool(PoolParams),
    GlobalAvgPool,
    Concat,
    Dropout { rate: f64 },
    /// `N×C×H×W → N×(C·H·W)×1×1`.
    Flatten,
    FullyConnected { weights: usize, bias: usize },
}

impl NodeOp {
    pub fn has_params(&self) -> bool {
        matches!(self, NodeOp::Conv { .. } | NodeOp::FullyConnected { .. })
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub op: NodeOp,
    pub inputs: Vec<NodeId>,
    /// Output shape for a batch of one.
    pub shape: Shape,
}

/// A parameter tensor slot: its shape and the fan-in used to initialize it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamInfo {
    pub shape: Shape,
    pub fan_in: usize,
    pub is_bias: bool,
}

/// Topologically ordered layer graph without parameter values.
#[derive(Debug, Clone)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub params: IndexMap<String, ParamInfo>,
}

impl Topology {
    pub fn output(&self) -> NodeId {
        NodeId(self.nodes.len() - 1)
    }

    pub fn input_shape(&self) -> Shape {
        self.nodes[0].shape
    }

    pub fn output_shape(&self) -> Shape {
        self.nodes[self.nodes.len() - 1].shape
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// Longest input→output path, counting conv and fully-connected nodes.
    pub fn param_layer_depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let best = node.inputs.iter().map(|p| depth[p.0]).max().unwrap_or(0);
            depth[i] = best + usize::from(node.op.has_params());
        }
        depth.into_iter().max().unwrap_or(0)
    }

    pub fn param_layer_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.has_params()).count()
    }

    /// Names of the parameters under layer `prefix` (e.g. `"classifier"`).
    pub fn params_of(&self, layer: &str) -> Vec<String> {
        let dotted = format!("{layer}.");
        self.params.keys().filter(|k| k.starts_with(&dotted)).cloned().collect()
    }
}

/// Appends nodes while inferring shapes, so every shape error surfaces
/// before any tensor is allocated.
#[derive(Debug)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: IndexMap<String, ParamInfo>,
}

fn shape(n: usize, c: usize, h: usize, w: usize) -> Result<Shape, NetError> {
    Shape::new(n, c, h, w).map_err(|e| NetError::Shape(e.to_string()))
}

impl GraphBuilder {
    pub fn new(input: Shape) -> Self {
        GraphBuilder {
            nodes: vec![Node { name: "input".into(), op: NodeOp::Input, inputs: vec![], shape: input }],
            params: IndexMap::new(),
        }
    }

    pub fn input(&self) -> NodeId {
        NodeId(0)
    }

    pub fn shape_of(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    fn push(&mut self, name: &str, op: NodeOp, inputs: Vec<NodeId>, shape: Shape) -> Result<NodeId, NetError> {
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(NetError::Spec(format!("duplicate layer name {name}")));
        }
        self.nodes.push(Node { name: name.to_string(), op, inputs, shape });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn add_param(&mut self, name: String, info: ParamInfo) -> Result<usize, NetError> {
        if self.params.contains_key(&name) {
            return Err(NetError::Spec(format!("duplicate parameter {name}")));
        }
        Ok(self.params.insert_full(name, info).0)
    }

    /// Convolution without activation.
    pub fn conv(&mut self, name: &str, x: NodeId, p: ConvParams) -> Result<NodeId, NetError> {
        let is = self.shape_of(x);
        let os = p.output_shape(is).map_err(|e| NetError::Shape(format!("{name}: {e}")))?;
        let fan_in = is.c * p.kernel_h * p.kernel_w;
        let weights = self.add_param(
            format!("{name}.weights"),
            ParamInfo { shape: shape(p.out_channels, is.c, p.kernel_h, p.kernel_w)?, fan_in, is_bias: false },
        )?;
        let bias = self.add_param(
            format!("{name}.bias"),
            ParamInfo { shape: shape(p.out_channels, 1, 1, 1)?, fan_in, is_bias: true },
        )?;
        self.push(name, NodeOp::Conv { params: p, weights, bias }, vec![x], os)
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> Result<NodeId, NetError> {
        let s = self.shape_of(x);
        self.push(name, NodeOp::Relu, vec![x], s)
    }

    /// Convolution followed by ReLU; returns the ReLU node.
    pub fn conv_relu(&mut self, name: &str, x: NodeId, p: ConvParams) -> Result<NodeId, NetError> {
        let c = self.conv(name, x, p)?;
        self.relu(&format!("{name}.relu"), c)
    }

    pub fn pool(&mut self, name: &str, x: NodeId, p: PoolParams) -> Result<NodeId, NetError> {
        let os = p
            .output_shape(self.shape_of(x))
            .map_err(|e| NetError::Shape(format!("{name}: {e}")))?;
        self.push(name, NodeOp::Pool(p), vec![x], os)
    }

    pub fn global_avg_pool(&mut self, name: &str, x: NodeId) -> Result<NodeId, NetError> {
        let s = self.shape_of(x);
        self.push(name, NodeOp::GlobalAvgPool, vec![x], shape(s.n, s.c, 1, 1)?)
    }

    pub fn dropout(&mut self, name: &str, x: NodeId, rate: f64) -> Result<NodeId, NetError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NetError::Spec(format!("{name}: dropout rate {rate} outside [0, 1)")));
        }
        let s = self.shape_of(x);
        self.push(name, NodeOp::Dropout { rate }, vec![x], s)
    }

    pub fn flatten(&mut self, name: &str, x: NodeId) -> Result<NodeId, NetError> {
        let s = self.shape_of(x);
        self.push(name, NodeOp::Flatten, vec![x], shape(s.n, s.item_len(), 1, 1)?)
    }

    /// Fully-connected layer, optionally followed by ReLU.
    pub fn fc(&mut self, name: &str, x: NodeId, out: usize, relu: bool) -> Result<NodeId, NetError> {
        let is = self.shape_of(x);
        if is.h != 1 || is.w != 1 {
            return Err(NetError::Shape(format!("{name}: fully connected input {is} is not 1x1")));
        }
        let weights = self.add_param(
            format!("{name}.weights"),
            ParamInfo { shape: shape(out, is.c, 1, 1)?, fan_in: is.c, is_bias: false },
        )?;
        let bias = self.add_param(
            format!("{name}.bias"),
            ParamInfo { shape: shape(out, 1, 1, 1)?, fan_in: is.c, is_bias: true },
        )?;
        let fc = self.push(name, NodeOp::FullyConnected { weights, bias }, vec![x], shape(is.n, out, 1, 1)?)?;
        if relu {
            self.relu(&format!("{name}.relu"), fc)
        } else {
            Ok(fc)
        }
    }

    pub fn concat(&mut self, name: &str, xs: Vec<NodeId>) -> Result<NodeId, NetError> {
        let first = self.shape_of(xs[0]);
        let mut c = 0;
        for &x in &xs {
            let s = self.shape_of(x);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(NetError::Shape(format!("{name}: cannot concat {s} with {first}")));
            }
            c += s.c;
        }
        self.push(name, NodeOp::Concat, xs, shape(first.n, c, first.h, first.w)?)
    }

    /// Four parallel branches joined on channels:
    /// 1×1; 1×1 → 3×3 (pad 1); 1×1 → 5×5 (pad 2); 3×3/1 max pool (pad 1) → 1×1.
    /// Every conv is followed by ReLU. Spatial size is preserved.
    pub fn inception(&mut self, name: &str, x: NodeId, cfg: &InceptionConfig) -> Result<NodeId, NetError> {
        cfg.validate()?;
        let a = self.conv_relu(&format!("{name}.c1"), x, ConvParams::square(cfg.c1, 1, 1, 0))?;
        let b = self.conv_relu(&format!("{name}.c3r"), x, ConvParams::square(cfg.c3r, 1, 1, 0))?;
        let b = self.conv_relu(&format!("{name}.c3"), b, ConvParams::square(cfg.c3, 3, 1, 1))?;
        let c = self.conv_relu(&format!("{name}.c5r"), x, ConvParams::square(cfg.c5r, 1, 1, 0))?;
        let c = self.conv_relu(&format!("{name}.c5"), c, ConvParams::square(cfg.c5, 5, 1, 2))?;
        let d = self.pool(&format!("{name}.pool"), x, PoolParams::max(3, 1, 1))?;
        let d = self.conv_relu(&format!("{name}.cp"), d, ConvParams::square(cfg.cp, 1, 1, 0))?;
        self.concat(&format!("{name}.concat"), vec![a, b, c, d])
    }

    pub fn finish(self) -> Topology {
        Topology { nodes: self.nodes, params: self.params }
    }
}

/// A single Inception module on an `in_channels × h × w` input.
pub fn build_inception(cfg: &InceptionConfig, in_channels: usize, h: usize, w: usize) -> Result<Topology, NetError> {
    let mut b = GraphBuilder::new(shape(1, in_channels, h, w)?);
    let x = b.input();
    b.inception("inception", x, cfg)?;
    Ok(b.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::spec::{NetworkSpec, StemLayer};
    use proptest::prelude::*;

    #[test]
    fn inception_3a_shape() {
        let t = build_inception(&InceptionConfig::new(64, 96, 128, 16, 32, 32), 192, 28, 28).unwrap();
        assert_eq!(t.output_shape(), Shape::new(1, 256, 28, 28).unwrap());
        assert_eq!(t.param_layer_count(), 6);
        assert_eq!(t.param_layer_depth(), 2);
    }

    #[test]
    fn minimal_inception() {
        let t = build_inception(&InceptionConfig::new(1, 1, 1, 1, 1, 1), 1, 5, 5).unwrap();
        assert_eq!(t.output_shape(), Shape::new(1, 4, 5, 5).unwrap());
        assert!(t.params.contains_key("inception.c3.weights"));
        assert_eq!(t.params["inception.c5.weights"].shape, Shape::new(1, 1, 5, 5).unwrap());
    }

    #[test]
    fn stem_depth() {
        let spec = NetworkSpec::deepfood22();
        let mut b = GraphBuilder::new(spec.input_shape().unwrap());
        let mut x = b.input();
        for (i, layer) in spec.stem.iter().enumerate() {
            x = match *layer {
                StemLayer::Conv { out, kernel, stride, pad } => {
                    b.conv_relu(&format!("c{i}"), x, ConvParams::square(out, kernel, stride, pad)).unwrap()
                }
                StemLayer::MaxPool { kernel, stride, pad } => {
                    b.pool(&format!("p{i}"), x, PoolParams::max(kernel, stride, pad)).unwrap()
                }
            };
        }
        assert_eq!(b.shape_of(x), Shape::new(1, 192, 28, 28).unwrap());
        assert_eq!(b.finish().param_layer_depth(), 3);
    }

    #[test]
    fn default_network_shapes() {
        let t = NetworkSpec::deepfood22().topology().unwrap();
        let find = |name: &str| t.nodes.iter().find(|n| n.name == name).unwrap().shape;
        assert_eq!(find("stem.conv1").dims(), [1, 64, 112, 112]);
        assert_eq!(find("stem.pool1").dims(), [1, 64, 56, 56]);
        assert_eq!(find("inception3a.concat").dims(), [1, 256, 28, 28]);
        assert_eq!(find("pool3").dims(), [1, 480, 14, 14]);
        assert_eq!(find("inception4e.concat").dims(), [1, 832, 14, 14]);
        assert_eq!(find("inception5b.concat").dims(), [1, 1024, 7, 7]);
        assert_eq!(t.output_shape().dims(), [1, 1000, 1, 1]);
        assert_eq!(t.param_layer_depth(), 22);
        assert_eq!(t.params_of("classifier"), vec!["classifier.weights", "classifier.bias"]);
    }

    proptest! {
        #[test]
        fn inception_preserves_spatial_dims(
            w in prop::array::uniform6(1usize..6),
            cin in 1usize..5,
            h in 1usize..12,
            ww in 1usize..12,
        ) {
            let cfg = InceptionConfig::from(w);
            let t = build_inception(&cfg, cin, h, ww).unwrap();
            let out = t.output_shape();
            prop_assert_eq!((out.h, out.w), (h, ww));
            prop_assert_eq!(out.c, cfg.out_channels());
        }
    }
}

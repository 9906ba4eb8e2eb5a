//! Executable layer graph: parameters, forward evaluation and reverse-mode
//! gradients.

use indexmap::IndexMap;

use super::spec::NetworkSpec;
use super::topology::{NodeId, NodeOp, Topology};
use super::NetError;
use crate::ops::{self, ConvAlgo, Mode};
use crate::rng::Rng;
use crate::tensor::{Real, Shape, Tensor};

/// Named gradient map, in parameter order.
pub type Gradients<T> = IndexMap<String, Tensor<T>>;

/// How fresh parameters are filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Zero-mean Gaussian weights with stddev `sqrt(2 / fan_in)`, zero bias.
    He { seed: u64 },
    Zeros,
}

enum Aux<T> {
    None,
    Mask(Vec<T>),
    Argmax(Vec<usize>),
}

struct Cache<T: Real> {
    acts: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
}

pub struct LayerGraph<T: Real = f32> {
    spec: NetworkSpec,
    topo: Topology,
    params: Vec<Tensor<T>>,
    algo: ConvAlgo,
    cache: Option<Cache<T>>,
}

impl<T: Real> std::fmt::Debug for LayerGraph<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LayerGraph")
            .field("nodes", &self.topo.nodes.len())
            .field("params", &self.params.len())
            .field("algo", &self.algo)
            .finish()
    }
}

fn he_values<T: Real>(shape: Shape, fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let data = rng.normal(0.0, std, shape.element_count()).into_iter().map(T::cast).collect();
    Tensor::from_vec(shape, data).expect("sample count matches shape")
}

impl<T: Real> LayerGraph<T> {
    pub fn new(spec: NetworkSpec, init: Init) -> Result<Self, NetError> {
        let topo = spec.topology()?;
        let mut rng = match init {
            Init::He { seed } => Some(Rng::new(seed)),
            Init::Zeros => None,
        };
        let params = topo
            .params
            .values()
            .map(|info| match rng.as_mut() {
                Some(rng) if !info.is_bias => he_values(info.shape, info.fan_in, rng),
                _ => Tensor::zeros(info.shape),
            })
            .collect();
        Ok(LayerGraph { spec, topo, params, algo: ConvAlgo::default(), cache: None })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Replaces preprocessing metadata (means, class names) that does not
    /// affect the layers.
    pub fn set_metadata(&mut self, mean: [f32; 3], class_names: Vec<String>) -> Result<(), NetError> {
        let mut spec = self.spec.clone();
        spec.mean = mean;
        spec.class_names = class_names;
        spec.validate()?;
        self.spec = spec;
        Ok(())
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn conv_algo(&self) -> ConvAlgo {
        self.algo
    }

    pub fn set_conv_algo(&mut self, algo: ConvAlgo) {
        self.algo = algo;
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.topo.params.keys().map(String::as_str)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.topo.params.keys().map(String::as_str).zip(&self.params)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.topo.params.get_index_of(name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.topo.params.get_index_of(name).map(move |i| &mut self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Overwrites parameter `name`; the shape must match.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<(), NetError> {
        let i = self
            .topo
            .params
            .get_index_of(name)
            .ok_or_else(|| NetError::UnknownParam(name.to_string()))?;
        if self.params[i].shape() != value.shape() {
            return Err(NetError::Shape(format!(
                "{name}: expected {}, got {}",
                self.params[i].shape(),
                value.shape()
            )));
        }
        self.params[i] = value;
        Ok(())
    }

    /// Re-draws the listed parameters with the He rule from `seed`.
    pub fn reinit_params(&mut self, names: &[String], seed: u64) -> Result<(), NetError> {
        let mut rng = Rng::new(seed);
        for name in names {
            let (i, _, info) = self
                .topo
                .params
                .get_full(name)
                .ok_or_else(|| NetError::UnknownParam(name.clone()))?;
            self.params[i] = if info.is_bias {
                Tensor::zeros(info.shape)
            } else {
                he_values(info.shape, info.fan_in, &mut rng)
            };
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(), NetError> {
        let (want, got) = (self.topo.input_shape(), input.shape());
        if (want.c, want.h, want.w) != (got.c, got.h, got.w) {
            return Err(NetError::Shape(format!(
                "input {got} does not match network input {}x{}x{}",
                want.c, want.h, want.w
            )));
        }
        Ok(())
    }

    fn run(&self, input: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Cache<T>, NetError> {
        self.check_input(input)?;
        let batch = input.shape().n;
        let mut acts: Vec<Tensor<T>> = Vec::with_capacity(self.topo.nodes.len());
        let mut aux = Vec::with_capacity(self.topo.nodes.len());
        for node in &self.topo.nodes {
            let arg = |k: usize| &acts[node.inputs[k].0];
            let (out, extra) = match &node.op {
                NodeOp::Input => (input.clone(), Aux::None),
                NodeOp::Conv { params, weights, bias } => {
                    let b = self.params[*bias].data();
                    (self.algo.forward(arg(0), &self.params[*weights], b, params)?, Aux::None)
                }
                NodeOp::Relu => (ops::relu(arg(0)), Aux::None),
                NodeOp::Pool(p) => {
                    let (y, idx) = ops::pool2d(arg(0), p)?;
                    (y, Aux::Argmax(idx))
                }
                NodeOp::GlobalAvgPool => (ops::global_avg_pool(arg(0))?, Aux::None),
                NodeOp::Concat => {
                    let xs: Vec<&Tensor<T>> = node.inputs.iter().map(|i| &acts[i.0]).collect();
                    (ops::concat_channels(&xs)?, Aux::None)
                }
                NodeOp::Dropout { rate } => {
                    let (y, mask) = ops::dropout(arg(0), *rate, mode, rng)?;
                    (y, if mode == Mode::Train { Aux::Mask(mask) } else { Aux::None })
                }
                NodeOp::Flatten => {
                    let x = arg(0).clone();
                    let s = x.shape();
                    (x.reshape(Shape::new(s.n, s.item_len(), 1, 1)?)?, Aux::None)
                }
                NodeOp::FullyConnected { weights, bias } => {
                    let b = self.params[*bias].data();
                    (ops::fully_connected(arg(0), &self.params[*weights], b)?, Aux::None)
                }
            };
            let expect = node.shape.with_batch(batch)?;
            if out.shape() != expect {
                return Err(NetError::Shape(format!(
                    "{}: produced {}, inferred {expect}",
                    node.name,
                    out.shape()
                )));
            }
            acts.push(out);
            aux.push(extra);
        }
        Ok(Cache { acts, aux })
    }

    /// Inference forward pass. Pure: safe to call concurrently.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let mut unused = Rng::new(0);
        let mut cache = self.run(input, Mode::Infer, &mut unused)?;
        Ok(cache.acts.pop().expect("graph has nodes"))
    }

    /// Forward pass returning logits. Train mode applies dropout and keeps
    /// activations for [`LayerGraph::backward`].
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>, NetError> {
        self.cache = None;
        let cache = self.run(input, mode, rng)?;
        let logits = cache.acts.last().expect("graph has nodes").clone();
        if mode == Mode::Train {
            self.cache = Some(cache);
        }
        Ok(logits)
    }

    /// Shapes observed at every node in the last training forward pass.
    pub fn cached_shapes(&self) -> Option<Vec<Shape>> {
        self.cache.as_ref().map(|c| c.acts.iter().map(Tensor::shape).collect())
    }

    /// Activations of every node from the last training forward pass, in
    /// topology order.
    pub fn cached_activations(&self) -> Option<&[Tensor<T>]> {
        self.cache.as_ref().map(|c| c.acts.as_slice())
    }

    /// Name of the first cached activation or parameter holding a NaN or
    /// infinity, in evaluation order.
    pub fn first_non_finite(&self) -> Option<String> {
        if let Some(cache) = &self.cache {
            for (node, act) in self.topo.nodes.iter().zip(&cache.acts) {
                if !act.all_finite() {
                    return Some(format!("activation {}", node.name));
                }
            }
        }
        self.params()
            .find(|(_, t)| !t.all_finite())
            .map(|(name, _)| format!("parameter {name}"))
    }

    /// Back-propagates `d_logits` through the cached forward pass.
    pub fn backward(&mut self, d_logits: &Tensor<T>) -> Result<Gradients<T>, NetError> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| NetError::State("backward called without a training forward pass".into()))?;
        let n = self.topo.nodes.len();
        if d_logits.shape() != cache.acts[n - 1].shape() {
            return Err(NetError::Shape(format!(
                "logit gradient {} != logits {}",
                d_logits.shape(),
                cache.acts[n - 1].shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let mut pgrads: Vec<Option<Tensor<T>>> = (0..self.params.len()).map(|_| None).collect();
        grads[n - 1] = Some(d_logits.clone());

        fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<(), NetError> {
            match slot {
                Some(acc) => acc.add_assign(&g)?,
                None => *slot = Some(g),
            }
            Ok(())
        }

        for i in (1..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.topo.nodes[i];
            let input = |k: usize| &cache.acts[node.inputs[k].0];
            let src = node.inputs.first().copied().unwrap_or(NodeId(0)).0;
            match &node.op {
                NodeOp::Input => {}
                NodeOp::Conv { params, weights, bias } => {
                    let lg = self.algo.backward(input(0), &self.params[*weights], &g, params)?;
                    pgrads[*weights] = lg.d_weights;
                    let db = lg.d_bias.expect("conv returns bias gradient");
                    pgrads[*bias] = Some(Tensor::from_vec(self.params[*bias].shape(), db)?);
                    accumulate(&mut grads[src], lg.d_input)?;
                }
                NodeOp::Relu => accumulate(&mut grads[src], ops::relu_backward(input(0), &g)?)?,
                NodeOp::Pool(p) => {
                    let Aux::Argmax(idx) = &cache.aux[i] else {
                        return Err(NetError::State(format!("{}: missing pool indices", node.name)));
                    };
                    let d = ops::pool2d_backward(input(0).shape(), &g, p, idx)?;
                    accumulate(&mut grads[src], d)?;
                }
                NodeOp::GlobalAvgPool => {
                    let d = ops::global_avg_pool_backward(input(0).shape(), &g)?;
                    accumulate(&mut grads[src], d)?;
                }
                NodeOp::Concat => {
                    let channels: Vec<usize> =
                        node.inputs.iter().map(|id| cache.acts[id.0].shape().c).collect();
                    let parts = ops::concat_backward(&g, &channels)?;
                    for (id, part) in node.inputs.iter().zip(parts) {
                        accumulate(&mut grads[id.0], part)?;
                    }
                }
                NodeOp::Dropout { .. } => {
                    let Aux::Mask(mask) = &cache.aux[i] else {
                        return Err(NetError::State(format!("{}: missing dropout mask", node.name)));
                    };
                    accumulate(&mut grads[src], ops::dropout_backward(&g, mask)?)?;
                }
                NodeOp::Flatten => accumulate(&mut grads[src], g.reshape(input(0).shape())?)?,
                NodeOp::FullyConnected { weights, bias } => {
                    let lg = ops::fully_connected_backward(input(0), &self.params[*weights], &g)?;
                    pgrads[*weights] = lg.d_weights;
                    let db = lg.d_bias.expect("fc returns bias gradient");
                    pgrads[*bias] = Some(Tensor::from_vec(self.params[*bias].shape(), db)?);
                    accumulate(&mut grads[src], lg.d_input)?;
                }
            }
        }

        Ok(self
            .topo
            .params
            .iter()
            .zip(pgrads)
            .map(|((name, info), g)| (name.clone(), g.unwrap_or_else(|| Tensor::zeros(info.shape))))
            .collect())
    }

    /// Softmax cross-entropy on the cached logits, then back-propagation.
    /// Returns the mean loss and the gradient of every parameter.
    pub fn backward_loss(&mut self, labels: &[usize]) -> Result<(f64, Gradients<T>), NetError> {
        let logits = self
            .cache
            .as_ref()
            .and_then(|c| c.acts.last())
            .ok_or_else(|| NetError::State("backward called without a training forward pass".into()))?;
        let (loss, probs) = ops::softmax_cross_entropy(logits, labels)?;
        let d = ops::softmax_cross_entropy_backward(&probs, labels)?;
        Ok((loss, self.backward(&d)?))
    }
}

/// Forward pass in the given mode.
pub fn graph_forward<T: Real>(
    graph: &mut LayerGraph<T>,
    input: &Tensor<T>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Tensor<T>, NetError> {
    graph.forward(input, mode, rng)
}

/// Gradient of the softmax loss for `labels` w.r.t. every parameter.
pub fn graph_backward<T: Real>(graph: &mut LayerGraph<T>, labels: &[usize]) -> Result<Gradients<T>, NetError> {
    Ok(graph.backward_loss(labels)?.1)
}

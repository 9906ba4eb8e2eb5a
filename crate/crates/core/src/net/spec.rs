//! Serializable network description.

use serde::{Deserialize, Serialize};

use super::topology::{GraphBuilder, NodeId, Topology};
use super::NetError;
use crate::ops::{ConvParams, PoolParams};
use crate::tensor::Shape;

/// The stock 22-layer configuration. Module widths are the nine standard
/// GoogLeNet tuples (3a through 5b).
pub const DEEPFOOD22_JSON: &str = include_str!("../../configs/deepfood22.json");

/// Two-Inception network on 64×64 inputs, small enough to train on a CPU in
/// seconds.
pub const MINI2_JSON: &str = include_str!("../../configs/mini2.json");

/// Branch widths of one Inception module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 6]", into = "[usize; 6]")]
pub struct InceptionConfig {
    /// 1×1 branch.
    pub c1: usize,
    /// 1×1 reduction feeding the 3×3 conv.
    pub c3r: usize,
    pub c3: usize,
    /// 1×1 reduction feeding the 5×5 conv.
    pub c5r: usize,
    pub c5: usize,
    /// 1×1 projection after the 3×3 max pool.
    pub cp: usize,
}

impl InceptionConfig {
    pub fn new(c1: usize, c3r: usize, c3: usize, c5r: usize, c5: usize, cp: usize) -> Self {
        InceptionConfig { c1, c3r, c3, c5r, c5, cp }
    }

    pub fn out_channels(&self) -> usize {
        self.c1 + self.c3 + self.c5 + self.cp
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if <[usize; 6]>::from(*self).contains(&0) {
            return Err(NetError::Spec(format!("inception widths must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

impl From<[usize; 6]> for InceptionConfig {
    fn from(w: [usize; 6]) -> Self {
        InceptionConfig::new(w[0], w[1], w[2], w[3], w[4], w[5])
    }
}

impl From<InceptionConfig> for [usize; 6] {
    fn from(c: InceptionConfig) -> Self {
        [c.c1, c.c3r, c.c3, c.c5r, c.c5, c.cp]
    }
}

/// One layer of the stem that precedes the Inception stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StemLayer {
    /// Convolution followed by ReLU.
    Conv {
        out: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
        #[serde(default)]
        pad: usize,
    },
}

fn one() -> usize {
    1
}

/// Classifier head on top of the last Inception module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Global average pool → dropout → FC(classes).
    #[serde(rename = "global-avg")]
    GlobalAvg,
    /// Avg-pool 5×5/3 → 1×1 conv 128 + ReLU → FC 1024 + ReLU → dropout → FC(classes).
    #[serde(rename = "paper")]
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[n, c, h, w]` of one input batch; `n` is nominal.
    pub input: [usize; 4],
    pub stem: Vec<StemLayer>,
    pub inception: Vec<InceptionConfig>,
    /// A 3×3/2 max pool follows each listed module index.
    #[serde(default)]
    pub pools_after: Vec<usize>,
    pub head: HeadKind,
    pub classes: usize,
    pub dropout: f64,
    /// Per-channel means subtracted from `[0, 1]`-scaled RGB input.
    #[serde(default, skip_serializing_if = "is_zero_mean")]
    pub mean: [f32; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_names: Vec<String>,
}

fn is_zero_mean(m: &[f32; 3]) -> bool {
    m.iter().all(|&v| v == 0.0)
}

/// Channels of the paper head's 1×1 conv and width of its hidden FC.
pub const PAPER_HEAD_CONV: usize = 128;
pub const PAPER_HEAD_FC: usize = 1024;

impl NetworkSpec {
    pub fn from_json(json: &str) -> Result<Self, NetError> {
        let spec: NetworkSpec =
            serde_json::from_str(json).map_err(|e| NetError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network spec serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("network spec serializes")
    }

    /// The stock 22-layer configuration.
    pub fn deepfood22() -> Self {
        Self::from_json(DEEPFOOD22_JSON).expect("bundled deepfood22.json is valid")
    }

    /// The bundled two-Inception network for 64×64 inputs.
    pub fn mini2() -> Self {
        Self::from_json(MINI2_JSON).expect("bundled mini2.json is valid")
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        self.classes = classes;
        self
    }

    pub fn with_head(mut self, head: HeadKind) -> Self {
        self.head = head;
        self
    }

    pub fn input_shape(&self) -> Result<Shape, NetError> {
        Shape::from_dims(self.input).map_err(|e| NetError::Spec(e.to_string()))
    }

    /// Class name for `index`, falling back to `class_<index>`.
    pub fn class_name(&self, index: usize) -> String {
        self.class_names
            .get(index)
            .cloned()
            .unwrap_or_else(|| format!("class_{index}"))
    }

    pub fn validate(&self) -> Result<(), NetError> {
        self.input_shape()?;
        if self.classes < 2 {
            return Err(NetError::Spec(format!("class count {} < 2", self.classes)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NetError::Spec(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        for cfg in &self.inception {
            cfg.validate()?;
        }
        if let Some(&bad) = self.pools_after.iter().find(|&&i| i >= self.inception.len()) {
            return Err(NetError::Spec(format!(
                "pool after module {bad}, but only {} modules",
                self.inception.len()
            )));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.classes {
            return Err(NetError::Spec(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.classes
            )));
        }
        Ok(())
    }

    /// True when both specs describe the same layers apart from the
    /// classifier width and preprocessing metadata.
    pub fn same_body(&self, other: &NetworkSpec) -> bool {
        self.input[1..] == other.input[1..]
            && self.stem == other.stem
            && self.inception == other.inception
            && self.pools_after == other.pools_after
            && self.head == other.head
    }

    /// Builds the layer topology with shape inference; fails on any
    /// shape-chain violation.
    pub fn topology(&self) -> Result<Topology, NetError> {
        self.validate()?;
        let input = self.input_shape()?.with_batch(1).map_err(|e| NetError::Spec(e.to_string()))?;
        let mut b = GraphBuilder::new(input);
        let mut x = b.input();
        let (mut convs, mut pools) = (0, 0);
        for layer in &self.stem {
            x = match *layer {
                StemLayer::Conv { out, kernel, stride, pad } => {
                    convs += 1;
                    b.conv_relu(&format!("stem.conv{convs}"), x, ConvParams::square(out, kernel, stride, pad))?
                }
                StemLayer::MaxPool { kernel, stride, pad } => {
                    pools += 1;
                    b.pool(&format!("stem.pool{pools}"), x, PoolParams::max(kernel, stride, pad))?
                }
            };
        }
        let mut group = 3;
        let mut letter = b'a';
        for (i, cfg) in self.inception.iter().enumerate() {
            x = b.inception(&format!("inception{group}{}", letter as char), x, cfg)?;
            letter += 1;
            if self.pools_after.contains(&i) {
                x = b.pool(&format!("pool{group}"), x, PoolParams::max(3, 2, 0))?;
                group += 1;
                letter = b'a';
            }
        }
        self.build_head(&mut b, x)?;
        Ok(b.finish())
    }

    fn build_head(&self, b: &mut GraphBuilder, x: NodeId) -> Result<NodeId, NetError> {
        let x = match self.head {
            HeadKind::GlobalAvg => {
                let x = b.global_avg_pool("head.avgpool", x)?;
                b.dropout("head.dropout", x, self.dropout)?
            }
            HeadKind::Paper => {
                let x = b.pool("head.avgpool", x, PoolParams::avg(5, 3, 0))?;
                let x = b.conv_relu("head.conv", x, ConvParams::square(PAPER_HEAD_CONV, 1, 1, 0))?;
                let x = b.flatten("head.flatten", x)?;
                let x = b.fc("head.fc", x, PAPER_HEAD_FC, true)?;
                b.dropout("head.dropout", x, self.dropout)?
            }
        };
        b.fc(CLASSIFIER, x, self.classes, false)
    }
}

/// Layer name of the final classifier; its parameters form the head that
/// fine-tuning replaces.
pub const CLASSIFIER: &str = "classifier";

/// Standard GoogLeNet stem, Inception widths, and head for `class_count`
/// outputs.
pub fn build_deepfood22(class_count: usize, head: HeadKind) -> Result<NetworkSpec, NetError> {
    let spec = NetworkSpec::deepfood22().with_classes(class_count).with_head(head);
    spec.validate()?;
    Ok(spec)
}

/// Longest input→output path counting only conv and FC layers.
pub fn param_layer_depth(spec: &NetworkSpec) -> Result<usize, NetError> {
    Ok(spec.topology()?.param_layer_depth())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_specs_parse() {
        let s = NetworkSpec::deepfood22();
        assert_eq!(s.input, [1, 3, 224, 224]);
        assert_eq!(s.inception.len(), 9);
        assert_eq!(s.inception[0], InceptionConfig::new(64, 96, 128, 16, 32, 32));
        assert_eq!(s.inception[8], InceptionConfig::new(384, 192, 384, 48, 128, 128));
        assert_eq!(s.dropout, 0.7);
        NetworkSpec::mini2();
    }

    #[test]
    fn json_round_trip() {
        let mut s = NetworkSpec::mini2();
        s.class_names = (0..s.classes).map(|i| format!("c{i}")).collect();
        s.mean = [0.5, 0.25, 0.125];
        let back = NetworkSpec::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_json(), s.to_json());
    }

    #[test]
    fn invalid_specs() {
        let s = NetworkSpec::mini2();
        assert!(s.clone().with_classes(1).validate().is_err());
        let mut bad = s.clone();
        bad.pools_after = vec![7];
        assert!(bad.validate().is_err());
        let mut bad = s.clone();
        bad.dropout = 1.0;
        assert!(bad.validate().is_err());
        assert!(NetworkSpec::from_json(r#"{"input": [1,3,8,8]}"#).is_err());
        // A stem that shrinks the input to nothing fails at build time.
        let mut bad = s;
        bad.input = [1, 3, 4, 4];
        assert!(matches!(bad.topology(), Err(NetError::Shape(_))));
    }

    #[test]
    fn depth_of_both_heads() {
        assert_eq!(param_layer_depth(&build_deepfood22(256, HeadKind::GlobalAvg).unwrap()).unwrap(), 22);
        assert_eq!(param_layer_depth(&build_deepfood22(256, HeadKind::Paper).unwrap()).unwrap(), 24);
    }
}

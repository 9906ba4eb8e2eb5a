//! Conv, architecture and evaluation oracles shared by the integration
//! tests and the acceptance runner.

use std::path::Path;

use deepfood::data::{DatasetManifest, Preprocess, Sample};
use deepfood::eval::{evaluate, ranking, topk_hit, Classifier, EvalOptions, EvalReport};
use deepfood::net::{build_deepfood22, param_layer_depth, HeadKind, Init, LayerGraph, NetError, NodeOp};
use deepfood::ops::{conv2d, conv2d_im2col, conv_output_dim, ConvParams, Mode};
use deepfood::{Rng, Shape, Tensor};
use image::{Rgb, RgbImage};

#[derive(Debug)]
pub struct ConvOracle {
    pub configs: usize,
    pub max_abs_diff: f64,
    pub worst: String,
}

fn random_f32(shape: Shape, rng: &mut Rng) -> Tensor<f32> {
    let v = rng.normal(0.0, 1.0, shape.element_count()).into_iter().map(|x| x as f32).collect();
    Tensor::from_vec(shape, v).unwrap()
}

/// im2col against the direct convolution over `configs` random settings
/// drawn from kernels {1,3,5,7}, strides {1,2,3}, pads 0..=3.
pub fn conv_oracle(configs: usize, seed: u64) -> ConvOracle {
    let mut rng = Rng::new(seed);
    let mut out = ConvOracle { configs: 0, max_abs_diff: 0.0, worst: String::new() };
    while out.configs < configs {
        let kernel = [1, 3, 5, 7][rng.below(4)];
        let stride = 1 + rng.below(3);
        let pad = rng.below(4);
        let h = kernel + rng.below(12);
        let w = kernel + rng.below(12);
        if conv_output_dim(h, kernel, stride, pad).is_err() || conv_output_dim(w, kernel, stride, pad).is_err() {
            continue;
        }
        let (n, c, k) = (1 + rng.below(2), 1 + rng.below(6), 1 + rng.below(6));
        let p = ConvParams::square(k, kernel, stride, pad);
        let x = random_f32(Shape::new(n, c, h, w).unwrap(), &mut rng);
        let wt = random_f32(Shape::new(k, c, kernel, kernel).unwrap(), &mut rng);
        let b: Vec<f32> = rng.normal(0.0, 1.0, k).into_iter().map(|v| v as f32).collect();
        let a = conv2d(&x, &wt, &b, &p).unwrap();
        let g = conv2d_im2col(&x, &wt, &b, &p).unwrap();
        assert_eq!(a.shape(), g.shape());
        let d = a.data().iter().zip(g.data()).map(|(u, v)| (u - v).abs() as f64).fold(0.0, f64::max);
        if d >= out.max_abs_diff {
            out.max_abs_diff = d;
            out.worst = format!("{n}x{c}x{h}x{w}, {k} {kernel}x{kernel} filters, stride {stride}, pad {pad}");
        }
        out.configs += 1;
    }
    out
}

#[derive(Debug)]
pub struct ArchCheck {
    pub classes: usize,
    pub logits_shape: [usize; 4],
    pub depth: usize,
    /// `(module, concat channels, c1+c3+c5+cp)`.
    pub modules: Vec<(String, usize, usize)>,
    pub zero_init_loss: f64,
}

impl ArchCheck {
    pub fn ok(&self) -> bool {
        self.logits_shape == [1, self.classes, 1, 1]
            && self.depth == 22
            && self.modules.len() == 9
            && self.modules.iter().all(|(_, got, want)| got == want)
            && (self.zero_init_loss - (self.classes as f64).ln()).abs() <= 1e-6
    }
}

/// Builds the full network for `classes` and runs one zero-weight pass on
/// a random 224×224 image.
pub fn architecture(classes: usize) -> Result<ArchCheck, NetError> {
    let spec = build_deepfood22(classes, HeadKind::GlobalAvg)?;
    let depth = param_layer_depth(&spec)?;
    let mut g = LayerGraph::<f32>::new(spec.clone(), Init::Zeros)?;
    let concats = g.topology().nodes.iter().filter(|n| n.op == NodeOp::Concat);
    let modules = concats
        .zip(&spec.inception)
        .map(|(node, cfg)| (node.name.clone(), node.shape.c, cfg.c1 + cfg.c3 + cfg.c5 + cfg.cp))
        .collect();
    let x = random_f32(Shape::new(1, 3, 224, 224).unwrap(), &mut Rng::new(classes as u64));
    let logits = g.forward(&x, Mode::Train, &mut Rng::new(0))?;
    let (loss, _) = g.backward_loss(&[classes - 1])?;
    Ok(ArchCheck { classes, logits_shape: logits.shape().dims(), depth, modules, zero_init_loss: loss })
}

/// Rank of `label` under the sort-based definition: number of classes
/// that beat it, counting ties at lower indices.
fn sorted_rank(logits: &[f64], label: usize) -> usize {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.iter().position(|&c| c == label).unwrap()
}

/// Random logits on a coarse grid so that ties occur.
fn grid_logits(rng: &mut Rng, classes: usize) -> Vec<f64> {
    (0..classes).map(|_| (rng.below(9) as f64 - 4.0) * 0.5).collect()
}

#[derive(Debug, Default)]
pub struct TopkOracle {
    pub trials: usize,
    pub sort_mismatches: usize,
    pub shift_mismatches: usize,
}

/// `trials` random cases of `topk_hit` against a full sort, and against
/// itself after adding a constant to every logit.
pub fn topk_oracle(trials: usize, seed: u64) -> TopkOracle {
    let mut rng = Rng::new(seed);
    let mut out = TopkOracle { trials, ..TopkOracle::default() };
    for _ in 0..trials {
        let classes = 1 + rng.below(12);
        let logits = grid_logits(&mut rng, classes);
        let label = rng.below(classes);
        let k = 1 + rng.below(classes);
        let hit = topk_hit(&logits, label, k).unwrap();
        if hit != (sorted_rank(&logits, label) < k) || ranking(&logits)[sorted_rank(&logits, label)] != label {
            out.sort_mismatches += 1;
        }
        let shift = rng.below(2001) as f64 - 1000.0;
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        if topk_hit(&shifted, label, k).unwrap() != hit {
            out.shift_mismatches += 1;
        }
    }
    out
}

/// Solid images whose red level encodes the class; `reds[c]` is the value.
pub fn solid_dataset(dir: &Path, classes: usize, per_class: usize) -> (DatasetManifest, Vec<u8>) {
    let reds: Vec<u8> = (0..classes).map(|c| (20 + 25 * c) as u8).collect();
    let mut samples = Vec::new();
    for i in 0..per_class {
        for (label, &r) in reds.iter().enumerate() {
            let path = dir.join(format!("c{label}_{i}.png"));
            RgbImage::from_pixel(12, 10, Rgb([r, 128, 64])).save(&path).unwrap();
            samples.push(Sample { path, label, bbox: None, split: None });
        }
    }
    let manifest = DatasetManifest {
        classes: (0..classes).map(|c| format!("c{c}")).collect(),
        samples,
        provenance: "solid".into(),
    };
    (manifest, reds)
}

/// Logits from a caller-supplied function of the red level, in `[0, 255]`.
pub struct RedClassifier<F> {
    pub classes: usize,
    pub score: F,
}

impl<F: Fn(f32, usize) -> f32 + Sync> Classifier for RedClassifier<F> {
    fn classes(&self) -> usize {
        self.classes
    }

    fn preprocess(&self) -> Preprocess {
        Preprocess::new(8, 8, [0.0; 3])
    }

    fn logits(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>, NetError> {
        let s = batch.shape();
        let plane = s.h * s.w;
        let mut v = Vec::with_capacity(s.n * self.classes);
        for n in 0..s.n {
            let red = batch.data()[n * 3 * plane] * 255.0;
            v.extend((0..self.classes).map(|c| (self.score)(red, c)));
        }
        Ok(Tensor::from_vec(Shape::new(s.n, self.classes, 1, 1).unwrap(), v).unwrap())
    }
}

#[derive(Debug)]
pub struct EvalOracle {
    pub rigged: EvalReport,
    pub constant: EvalReport,
    pub reversed: EvalReport,
}

/// Reports from a perfect, a constant and an exactly-wrong classifier on
/// an 8-class solid-colour set.
pub fn eval_oracle(dir: &Path) -> EvalOracle {
    let (manifest, reds) = solid_dataset(dir, 8, 3);
    let opts = EvalOptions::default();
    let near = |red: f32, c: usize| -(red - reds[c] as f32).abs();
    let rigged = evaluate(&RedClassifier { classes: 8, score: near }, &manifest, &opts).unwrap();
    let constant = evaluate(&RedClassifier { classes: 8, score: |_, _| 0.25 }, &manifest, &opts).unwrap();
    let far = |red: f32, c: usize| (red - reds[c] as f32).abs();
    let reversed = evaluate(&RedClassifier { classes: 8, score: far }, &manifest, &opts).unwrap();
    EvalOracle { rigged, constant, reversed }
}

impl EvalOracle {
    pub fn reports(&self) -> [&EvalReport; 3] {
        [&self.rigged, &self.constant, &self.reversed]
    }

    pub fn ok(&self) -> bool {
        let exact = |a: f64, b: f64| (a - b).abs() < 1e-12;
        exact(self.rigged.top1, 1.0)
            && exact(self.rigged.top5, 1.0)
            && exact(self.constant.top1, 1.0 / 8.0)
            && exact(self.constant.top5, 5.0 / 8.0)
            && exact(self.reversed.top1, 0.0)
            && self.reports().iter().all(|r| r.top1 <= r.top5)
    }
}

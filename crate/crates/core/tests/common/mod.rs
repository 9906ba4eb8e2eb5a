//! Finite-difference gradient checks shared by the gradient tests and the
//! acceptance runner.
#![allow(dead_code)]

pub mod oracles;

use deepfood::net::{Init, LayerGraph, NetworkSpec, NodeOp};
use deepfood::ops::{self, ConvAlgo, ConvParams, Mode, PoolKind, PoolParams, Rounding};
use deepfood::{Rng, Shape, Tensor};

pub const EPS: f64 = 1e-3;
/// Denominator floor of the relative error, so values that are zero up to
/// rounding do not blow up the ratio.
pub const REL_FLOOR: f64 = 1e-3;
/// Coordinates probed per tensor.
const PROBES: usize = 24;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

pub fn random(shape: Shape, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_vec(shape, rng.normal(0.0, 1.0, shape.element_count())).unwrap()
}

fn dot(a: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    a.data().iter().zip(r.data()).map(|(x, y)| x * y).sum()
}

/// Largest relative error between `analytic` and central differences of
/// `f` at `x`, probing up to `PROBES` random coordinates.
pub fn check(x: &Tensor<f64>, analytic: &Tensor<f64>, rng: &mut Rng, f: impl Fn(&Tensor<f64>) -> f64) -> f64 {
    assert_eq!(x.shape(), analytic.shape());
    let mut idx: Vec<usize> = (0..x.len()).collect();
    rng.shuffle(&mut idx);
    idx.truncate(PROBES);
    let mut worst = 0.0f64;
    for i in idx {
        let mut xp = x.clone();
        xp.data_mut()[i] += EPS;
        let mut xm = x.clone();
        xm.data_mut()[i] -= EPS;
        let numeric = (f(&xp) - f(&xm)) / (2.0 * EPS);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    worst
}

fn vec_tensor(v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(Shape::new(1, v.len(), 1, 1).unwrap(), v.to_vec()).unwrap()
}

/// Worst error and number of random shapes for one op.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
}

fn conv_case(algo: ConvAlgo, rng: &mut Rng) -> f64 {
    let kernel = [1, 3, 5][rng.below(3)];
    let pad = rng.below(3);
    let (h, w) = (kernel.max(2) + rng.below(5), kernel.max(2) + rng.below(5));
    let x = random(Shape::new(1 + rng.below(2), 1 + rng.below(3), h, w).unwrap(), rng);
    let p = ConvParams::square(1 + rng.below(4), kernel, 1 + rng.below(3), pad);
    let wt = random(Shape::new(p.out_channels, x.shape().c, kernel, kernel).unwrap(), rng);
    let b: Vec<f64> = rng.normal(0.0, 1.0, p.out_channels);
    let r = random(p.output_shape(x.shape()).unwrap(), rng);
    let g = algo.backward(&x, &wt, &r, &p).unwrap();
    let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]| dot(&algo.forward(x, w, b, &p).unwrap(), &r);
    let ex = check(&x, &g.d_input, rng, |x| loss(x, &wt, &b));
    let ew = check(&wt, g.d_weights.as_ref().unwrap(), rng, |w| loss(&x, w, &b));
    let eb = check(&vec_tensor(&b), &vec_tensor(g.d_bias.as_ref().unwrap()), rng, |b| loss(&x, &wt, b.data()));
    ex.max(ew).max(eb)
}

/// Input whose values are pairwise at least 0.01 apart, so no max-pool
/// window has a near tie.
fn distinct(shape: Shape, rng: &mut Rng) -> Tensor<f64> {
    let mut v: Vec<f64> = (0..shape.element_count()).map(|i| i as f64 * 0.01 - 0.5).collect();
    rng.shuffle(&mut v);
    Tensor::from_vec(shape, v).unwrap()
}

fn pool_case(max: bool, rng: &mut Rng) -> f64 {
    let kernel = 2 + rng.below(3);
    let stride = 1 + rng.below(3);
    let pad = rng.below(kernel);
    let rounding = if rng.below(2) == 0 { Rounding::Ceil } else { Rounding::Floor };
    let p = if max { PoolParams::max(kernel, stride, pad) } else { PoolParams::avg(kernel, stride, pad) }.with_rounding(rounding);
    let x = distinct(Shape::new(1 + rng.below(2), 1 + rng.below(3), kernel + rng.below(6), kernel + rng.below(6)).unwrap(), rng);
    let (y, arg) = ops::pool2d(&x, &p).unwrap();
    let r = random(y.shape(), rng);
    let d = ops::pool2d_backward(x.shape(), &r, &p, &arg).unwrap();
    check(&x, &d, rng, |x| dot(&ops::pool2d(x, &p).unwrap().0, &r))
}

fn global_avg_case(rng: &mut Rng) -> f64 {
    let x = random(Shape::new(1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(7), 1 + rng.below(7)).unwrap(), rng);
    let r = random(Shape::new(x.shape().n, x.shape().c, 1, 1).unwrap(), rng);
    let d = ops::global_avg_pool_backward(x.shape(), &r).unwrap();
    check(&x, &d, rng, |x| dot(&ops::global_avg_pool(x).unwrap(), &r))
}

fn relu_case(rng: &mut Rng) -> f64 {
    let shape = Shape::new(1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6)).unwrap();
    // Keep every input at least 1e-2 away from the kink.
    let x = random(shape, rng).map(|v| if v.abs() < 1e-2 { v.signum() * 1e-2 + v } else { v });
    let r = random(shape, rng);
    let d = ops::relu_backward(&x, &r).unwrap();
    check(&x, &d, rng, |x| dot(&ops::relu(x), &r))
}

fn dropout_case(rng: &mut Rng) -> f64 {
    let shape = Shape::new(1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6)).unwrap();
    let x = random(shape, rng);
    let r = random(shape, rng);
    let rate = rng.uniform_range(0.0, 0.9);
    let seed = rng.below(1000) as u64;
    let (_, mask) = ops::dropout(&x, rate, Mode::Train, &mut Rng::new(seed)).unwrap();
    let d = ops::dropout_backward(&r, &mask).unwrap();
    check(&x, &d, rng, |x| dot(&ops::dropout(x, rate, Mode::Train, &mut Rng::new(seed)).unwrap().0, &r))
}

fn fc_case(rng: &mut Rng) -> f64 {
    let (n, d, k) = (1 + rng.below(4), 1 + rng.below(8), 1 + rng.below(6));
    let x = random(Shape::new(n, d, 1, 1).unwrap(), rng);
    let w = random(Shape::new(k, d, 1, 1).unwrap(), rng);
    let b = rng.normal(0.0, 1.0, k);
    let r = random(Shape::new(n, k, 1, 1).unwrap(), rng);
    let g = ops::fully_connected_backward(&x, &w, &r).unwrap();
    let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]| dot(&ops::fully_connected(x, w, b).unwrap(), &r);
    let ex = check(&x, &g.d_input, rng, |x| loss(x, &w, &b));
    let ew = check(&w, g.d_weights.as_ref().unwrap(), rng, |w| loss(&x, w, &b));
    let eb = check(&vec_tensor(&b), &vec_tensor(g.d_bias.as_ref().unwrap()), rng, |b| loss(&x, &w, b.data()));
    ex.max(ew).max(eb)
}

fn concat_case(rng: &mut Rng) -> f64 {
    let (n, h, w) = (1 + rng.below(2), 1 + rng.below(5), 1 + rng.below(5));
    let parts: Vec<Tensor<f64>> =
        (0..2 + rng.below(3)).map(|_| random(Shape::new(n, 1 + rng.below(4), h, w).unwrap(), rng)).collect();
    let refs: Vec<&Tensor<f64>> = parts.iter().collect();
    let y = ops::concat_channels(&refs).unwrap();
    let r = random(y.shape(), rng);
    let channels: Vec<usize> = parts.iter().map(|p| p.shape().c).collect();
    let grads = ops::concat_backward(&r, &channels).unwrap();
    let mut worst = 0.0f64;
    for i in 0..parts.len() {
        let e = check(&parts[i], &grads[i], rng, |xi| {
            let refs: Vec<&Tensor<f64>> = parts.iter().enumerate().map(|(j, p)| if j == i { xi } else { p }).collect();
            dot(&ops::concat_channels(&refs).unwrap(), &r)
        });
        worst = worst.max(e);
    }
    worst
}

fn softmax_ce_case(rng: &mut Rng) -> f64 {
    let (n, k) = (1 + rng.below(5), 2 + rng.below(8));
    let x = random(Shape::new(n, k, 1, 1).unwrap(), rng).map(|v| 3.0 * v);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
    let (_, probs) = ops::softmax_cross_entropy(&x, &labels).unwrap();
    let d = ops::softmax_cross_entropy_backward(&probs, &labels).unwrap();
    check(&x, &d, rng, |x| ops::softmax_cross_entropy(x, &labels).unwrap().0)
}

/// Runs every op on `cases` random shapes.
pub fn op_suite(cases: usize, seed: u64) -> Vec<OpCheck> {
    type Case = fn(&mut Rng) -> f64;
    let ops_list: [(&'static str, Case); 10] = [
        ("conv2d", |r| conv_case(ConvAlgo::Naive, r)),
        ("conv2d_im2col", |r| conv_case(ConvAlgo::Im2col, r)),
        ("max_pool", |r| pool_case(true, r)),
        ("avg_pool", |r| pool_case(false, r)),
        ("global_avg_pool", global_avg_case),
        ("relu", relu_case),
        ("dropout", dropout_case),
        ("fully_connected", fc_case),
        ("concat_channels", concat_case),
        ("softmax_cross_entropy", softmax_ce_case),
    ];
    ops_list
        .iter()
        .enumerate()
        .map(|(i, &(op, case))| {
            let mut rng = Rng::new(seed).fork(i as u64);
            let max_rel_err = (0..cases).map(|_| case(&mut rng)).fold(0.0, f64::max);
            OpCheck { op, cases, max_rel_err }
        })
        .collect()
}

pub const MINI_NET: &str = r#"{"input":[2,3,16,16],
    "stem":[{"type":"conv","out":8,"kernel":3,"pad":1}],
    "inception":[[2,2,2,2,2,2]],
    "head":"global-avg","classes":3,"dropout":0.3}"#;

/// Which side of every ReLU kink and which max-pool winner each element
/// sits on. Two points with equal signatures lie in the same linear piece.
fn signature(graph: &LayerGraph<f64>) -> Vec<usize> {
    let acts = graph.cached_activations().unwrap();
    let mut sig = Vec::new();
    for node in &graph.topology().nodes {
        let input = node.inputs.first().map(|id| &acts[id.0]);
        match &node.op {
            NodeOp::Relu => sig.extend(input.unwrap().data().iter().map(|&v| (v > 0.0) as usize)),
            NodeOp::Pool(p) if p.kind == PoolKind::Max => sig.extend(ops::pool2d(input.unwrap(), p).unwrap().1),
            _ => {}
        }
    }
    sig
}

/// End-to-end check of every parameter of the miniature network, with
/// dropout masks frozen by reseeding. Probes whose ±ε perturbation moves
/// any element across a ReLU kink or changes a max-pool winner are
/// skipped. Returns the worst error, tensors checked and probes skipped.
pub fn network_check(seed: u64) -> NetCheck {
    let spec = NetworkSpec::from_json(MINI_NET).unwrap();
    let mut graph: LayerGraph<f64> = LayerGraph::new(spec, Init::He { seed }).unwrap();
    let mut rng = Rng::new(seed).fork(9);
    // Zero biases put the 1x1 branches exactly on the ReLU kink wherever
    // every stem channel is dead, so start from small random biases.
    let biases: Vec<String> = graph.param_names().filter(|n| n.ends_with(".bias")).map(String::from).collect();
    for name in biases {
        let shape = graph.param(&name).unwrap().shape();
        let b = Tensor::from_vec(shape, rng.normal(0.0, 0.1, shape.element_count())).unwrap();
        graph.set_param(&name, b).unwrap();
    }
    let x = random(Shape::new(2, 3, 16, 16).unwrap(), &mut rng);
    let labels = [0usize, 2];
    let drop_seed = seed + 1;
    graph.forward(&x, Mode::Train, &mut Rng::new(drop_seed)).unwrap();
    let base_sig = signature(&graph);
    let (_, grads) = graph.backward_loss(&labels).unwrap();
    let names: Vec<String> = graph.param_names().map(String::from).collect();
    assert_eq!(names.len(), grads.len());
    let mut probe = graph.spec().clone();
    probe.input[0] = 2;
    let mut scratch: LayerGraph<f64> = LayerGraph::new(probe, Init::Zeros).unwrap();
    let mut out = NetCheck { max_rel_err: 0.0, tensors: names.len(), probes: 0, skipped: 0 };
    for name in &names {
        let p = graph.param(name).unwrap().clone();
        let mut idx: Vec<usize> = (0..p.len()).collect();
        rng.shuffle(&mut idx);
        let mut taken = 0;
        for i in idx {
            if taken == PROBES {
                break;
            }
            let mut eval = |delta: f64| {
                for (n, t) in graph.params() {
                    scratch.set_param(n, t.clone()).unwrap();
                }
                let mut v = p.clone();
                v.data_mut()[i] += delta;
                scratch.set_param(name, v).unwrap();
                let logits = scratch.forward(&x, Mode::Train, &mut Rng::new(drop_seed)).unwrap();
                (ops::softmax_cross_entropy(&logits, &labels).unwrap().0, signature(&scratch))
            };
            let ((fp, sp), (fm, sm)) = (eval(EPS), eval(-EPS));
            if sp != base_sig || sm != base_sig {
                out.skipped += 1;
                continue;
            }
            taken += 1;
            out.probes += 1;
            let e = rel_err(grads[name].data()[i], (fp - fm) / (2.0 * EPS));
            if std::env::var("GC_DEBUG").is_ok() && e > 1e-4 {
                eprintln!("{name}[{i}]: {e:e}");
            }
            out.max_rel_err = out.max_rel_err.max(e);
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct NetCheck {
    pub max_rel_err: f64,
    pub tensors: usize,
    pub probes: usize,
    pub skipped: usize,
}

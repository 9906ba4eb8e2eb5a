use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::net::{Init, LayerGraph, NetworkSpec};
use crate::ops::{ConvAlgo, ConvParams, Mode};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchOp {
    ConvNaive,
    ConvIm2col,
    /// Runs both convolution paths and checks their outputs agree.
    ConvCompare,
    Forward,
    ForwardBackward,
}

impl BenchOp {
    pub const NAMES: [&'static str; 5] = ["conv-naive", "conv-im2col", "conv-compare", "forward", "forward-backward"];

    pub fn name(self) -> &'static str {
        match self {
            BenchOp::ConvNaive => "conv-naive",
            BenchOp::ConvIm2col => "conv-im2col",
            BenchOp::ConvCompare => "conv-compare",
            BenchOp::Forward => "forward",
            BenchOp::ForwardBackward => "forward-backward",
        }
    }
}

impl std::str::FromStr for BenchOp {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "conv-naive" => BenchOp::ConvNaive,
            "conv-im2col" => BenchOp::ConvIm2col,
            "conv-compare" => BenchOp::ConvCompare,
            "forward" => BenchOp::Forward,
            "forward-backward" => BenchOp::ForwardBackward,
            other => {
                return Err(EvalError::Param(format!(
                    "unknown bench op {other:?}; expected one of {}",
                    BenchOp::NAMES.join(", ")
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub op: String,
    pub input_shape: [usize; 4],
    pub detail: String,
    pub iterations: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    /// Images per second at the mean latency.
    pub throughput: f64,
    /// Sum of the output values, for cross-checking implementations.
    pub checksum: f64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn time<F: FnMut() -> f64>(iterations: usize, warmup: usize, mut f: F) -> Result<(Vec<f64>, f64), EvalError> {
    if iterations == 0 {
        return Err(EvalError::Param("iterations must be at least 1".into()));
    }
    let mut checksum = 0.0;
    for _ in 0..warmup {
        checksum = f();
    }
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        checksum = f();
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok((samples, checksum))
}

fn report(op: &str, shape: Shape, detail: String, warmup: usize, samples: Vec<f64>, checksum: f64) -> BenchReport {
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    BenchReport {
        op: op.into(),
        input_shape: shape.dims(),
        detail,
        iterations: samples.len(),
        warmup,
        // A single sample reports exactly that sample everywhere.
        mean_ms: if samples.len() == 1 { samples[0] } else { mean },
        min_ms: sorted[0],
        p50_ms: percentile(&sorted, 0.5),
        p90_ms: percentile(&sorted, 0.9),
        p99_ms: percentile(&sorted, 0.99),
        max_ms: sorted[sorted.len() - 1],
        throughput: shape.n as f64 / (mean / 1e3),
        checksum,
    }
}

fn random(shape: Shape, rng: &mut Rng, std: f64) -> Tensor<f32> {
    let data = rng.normal(0.0, std, shape.element_count()).into_iter().map(|v| v as f32).collect();
    Tensor::from_vec(shape, data).expect("length matches")
}

/// Times one convolution path on seeded random input and filters.
pub fn bench_conv(
    algo: ConvAlgo,
    input: Shape,
    params: ConvParams,
    iterations: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchReport, EvalError> {
    params.validate().map_err(crate::net::NetError::from)?;
    let mut rng = Rng::new(seed);
    let x = random(input, &mut rng, 1.0);
    let w_shape = Shape::new(params.out_channels, input.c, params.kernel_h, params.kernel_w)?;
    let w = random(w_shape, &mut rng, (2.0 / (input.c * params.kernel_h * params.kernel_w) as f64).sqrt());
    let b = vec![0.0f32; params.out_channels];
    let mut err = None;
    let (samples, checksum) = time(iterations, warmup, || match algo.forward(&x, &w, &b, &params) {
        Ok(y) => y.sum_f64(),
        Err(e) => {
            err = Some(e);
            f64::NAN
        }
    })?;
    if let Some(e) = err {
        return Err(crate::net::NetError::from(e).into());
    }
    let op = match algo {
        ConvAlgo::Naive => BenchOp::ConvNaive,
        ConvAlgo::Im2col => BenchOp::ConvIm2col,
    };
    let detail = format!(
        "{} {}x{} filters, stride {}, pad {}",
        params.out_channels, params.kernel_h, params.kernel_w, params.stride, params.pad
    );
    Ok(report(op.name(), input, detail, warmup, samples, checksum))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvComparison {
    pub naive: BenchReport,
    pub im2col: BenchReport,
    /// Largest elementwise difference between the two outputs.
    pub max_abs_diff: f64,
    pub checksums_match: bool,
    /// Naive mean latency over im2col mean latency.
    pub speedup: f64,
}

/// Benchmarks both convolution paths on identical data.
pub fn compare_conv(
    input: Shape,
    params: ConvParams,
    iterations: usize,
    warmup: usize,
    seed: u64,
) -> Result<ConvComparison, EvalError> {
    let naive = bench_conv(ConvAlgo::Naive, input, params, iterations, warmup, seed)?;
    let im2col = bench_conv(ConvAlgo::Im2col, input, params, iterations, warmup, seed)?;
    let mut rng = Rng::new(seed);
    let x = random(input, &mut rng, 1.0);
    let w_shape = Shape::new(params.out_channels, input.c, params.kernel_h, params.kernel_w)?;
    let w = random(w_shape, &mut rng, (2.0 / (input.c * params.kernel_h * params.kernel_w) as f64).sqrt());
    let b = vec![0.0f32; params.out_channels];
    let to_eval = |e| EvalError::from(crate::net::NetError::from(e));
    let a = ConvAlgo::Naive.forward(&x, &w, &b, &params).map_err(to_eval)?;
    let c = ConvAlgo::Im2col.forward(&x, &w, &b, &params).map_err(to_eval)?;
    let max_abs_diff = a.max_abs_diff(&c);
    let scale = a.data().iter().map(|v| v.abs() as f64).sum::<f64>().max(1.0);
    Ok(ConvComparison {
        checksums_match: (naive.checksum - im2col.checksum).abs() <= 1e-6 * scale && max_abs_diff <= 1e-5,
        speedup: naive.mean_ms / im2col.mean_ms,
        max_abs_diff,
        naive,
        im2col,
    })
}

/// Times a full-network forward (or forward plus backward) pass with
/// He-initialised weights on a batch of `batch` random images.
pub fn bench_network(
    spec: &NetworkSpec,
    batch: usize,
    backward: bool,
    iterations: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchReport, EvalError> {
    let mut graph: LayerGraph<f32> = LayerGraph::new(spec.clone(), Init::He { seed })?;
    let shape = spec.input_shape()?.with_batch(batch)?;
    let mut rng = Rng::new(seed).fork(2);
    let x = random(shape, &mut rng, 0.5);
    let labels: Vec<usize> = (0..batch).map(|i| i % spec.classes).collect();
    let mut err = None;
    let (samples, checksum) = time(iterations, warmup, || {
        let run = |graph: &mut LayerGraph<f32>, rng: &mut Rng| -> Result<f64, crate::net::NetError> {
            if backward {
                let logits = graph.forward(&x, Mode::Train, rng)?;
                let (_, grads) = graph.backward_loss(&labels)?;
                Ok(logits.sum_f64() + grads.values().map(|g| g.sum_f64()).sum::<f64>())
            } else {
                Ok(graph.infer(&x)?.sum_f64())
            }
        };
        match run(&mut graph, &mut Rng::new(seed)) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                f64::NAN
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e.into());
    }
    let op = if backward { BenchOp::ForwardBackward } else { BenchOp::Forward };
    let detail = format!("{} classes, {} parameters", spec.classes, graph.param_count());
    Ok(report(op.name(), shape, detail, warmup, samples, checksum))
}

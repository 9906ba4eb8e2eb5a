use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use deepfood::data::synth::{self, Pattern};
use deepfood::data::{self, BBox, BatchIter, DatasetManifest, Preprocess, SplitSel};
use deepfood::eval::{self, BenchOp, EvalOptions};
use deepfood::net::{HeadKind, Init, LayerGraph, NetworkSpec};
use deepfood::ops::{ConvAlgo, ConvParams};
use deepfood::train::{self, Checkpoint, OptimizerState, TrainConfig, Trainer};
use deepfood::Shape;
use log::info;
use serde::Serialize;

use crate::failure::Failure;
use crate::{BenchArgs, Command, DatasetCommand, EvalArgs, Head, InspectArgs, PredictArgs, RunArgs, SynthKind};

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train(a) => {
            let manifest = data::load_manifest(&a.run.manifest)?;
            let mut spec = load_spec(&a.net)?;
            if let Some(h) = a.head {
                spec = spec.with_head(match h {
                    Head::GlobalAvg => HeadKind::GlobalAvg,
                    Head::Paper => HeadKind::Paper,
                });
            }
            let classes = a.classes.unwrap_or(manifest.class_count());
            if classes != manifest.class_count() {
                return Err(Failure::Usage(format!(
                    "--classes {classes} but the manifest has {} classes",
                    manifest.class_count()
                )));
            }
            let config = train_config(&a.run)?;
            let graph = LayerGraph::new(spec.with_classes(classes), Init::He { seed: config.seed })?;
            fit(graph, manifest, &a.run, config)
        }
        Command::Finetune(a) => {
            let manifest = data::load_manifest(&a.run.manifest)?;
            let classes = a.classes.unwrap_or(manifest.class_count());
            if classes != manifest.class_count() {
                return Err(Failure::Usage(format!(
                    "--classes {classes} but the manifest has {} classes",
                    manifest.class_count()
                )));
            }
            let config = train_config(&a.run)?;
            let graph = train::finetune_load(&a.from, classes, config.seed)?;
            info!("loaded {} with a fresh {classes}-way classifier", a.from.display());
            fit(graph, manifest, &a.run, config)
        }
        Command::Eval(a) => eval_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Dataset(d) => dataset_cmd(d),
        Command::InspectCheckpoint(a) => inspect_cmd(a),
    }
}

fn load_spec(net: &str) -> Result<NetworkSpec, Failure> {
    Ok(match net {
        "deepfood22" => NetworkSpec::deepfood22(),
        "mini2" => NetworkSpec::mini2(),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{path}: {e}")))?;
            NetworkSpec::from_json(&text)?
        }
    })
}

fn train_config(a: &RunArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            TrainConfig::from_json(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.max_iterations {
        cfg.max_iterations = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.base_lr = v;
    }
    if let Some(v) = a.snapshot_every {
        cfg.snapshot_every = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn fit(mut graph: LayerGraph<f32>, manifest: DatasetManifest, a: &RunArgs, config: TrainConfig) -> Result<(), Failure> {
    let spec = graph.spec().clone();
    let mean = if a.compute_means {
        let m = data::compute_channel_means(&manifest, a.split, a.use_bbox, spec.input[2], spec.input[3])?;
        info!("channel means {m:?}");
        m
    } else {
        spec.mean
    };
    graph.set_metadata(mean, manifest.classes.clone())?;
    let pre = Preprocess::for_spec(graph.spec());
    let manifest = Arc::new(manifest);
    let mut batches = BatchIter::new(manifest, a.split, config.batch_size, config.seed, a.use_bbox, pre)?;
    if a.cache {
        batches = batches.cached();
    }
    info!(
        "training {} parameters on {} samples for {} iterations",
        graph.param_count(),
        batches.len(),
        config.max_iterations
    );
    let mut state = OptimizerState::new(&graph);
    let prefix = a.out.with_extension("");
    let mut stdout = io::stdout().lock();
    let mut file;
    let log: &mut dyn Write = match &a.log {
        Some(p) => {
            file = create(p)?;
            &mut file
        }
        None => &mut stdout,
    };
    let summary = Trainer::new(&config)
        .with_log(log)
        .with_snapshots(&prefix)
        .run(&mut graph, &mut state, &mut batches)?;
    for s in &summary.snapshots {
        info!("snapshot {}", s.display());
    }
    Checkpoint::from_graph(&graph).save(&a.out)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn emit<T: Serialize>(value: &T) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::Data(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn load_model(path: &Path) -> Result<LayerGraph<f32>, Failure> {
    Ok(train::checkpoint_load(path)?)
}

fn eval_cmd(a: EvalArgs) -> Result<(), Failure> {
    let graph = load_model(&a.model)?;
    let manifest = data::load_manifest(&a.manifest)?;
    let opts = EvalOptions { split: a.split, use_bbox: a.use_bbox, topk: a.topk, batch_size: a.batch_size };
    let report = eval::evaluate(&graph, &manifest, &opts)?;
    if !a.human {
        return emit(&report);
    }
    let mut out = io::stdout().lock();
    writeln!(out, "dataset   {}", report.dataset)?;
    writeln!(out, "split     {} ({} samples)", report.config.split, report.split_size)?;
    for t in &report.topk {
        writeln!(out, "top-{:<5} {:>7.2}%  ({}/{})", t.k, 100.0 * t.accuracy, t.hits, report.split_size)?;
    }
    writeln!(out, "time      {:.2}s", report.wall_time_s)?;
    writeln!(out)?;
    let width = report.per_class.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
    writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}", "class", "n", "top1", "top5")?;
    for c in &report.per_class {
        writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}", c.name, c.total, c.top1_hits, c.top5_hits)?;
    }
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<(), Failure> {
    let graph = load_model(&a.model)?;
    let bbox = match a.bbox.as_deref() {
        None => None,
        Some(&[x1, y1, x2, y2]) => Some(BBox::new(x1, y1, x2, y2)),
        Some(_) => return Err(Failure::Usage("--bbox takes four values x1,y1,x2,y2".into())),
    };
    let preds = eval::predict(&graph, &a.image, bbox.as_ref(), a.topk)?;
    if !a.human {
        return emit(&preds);
    }
    let mut out = io::stdout().lock();
    for (rank, p) in preds.iter().enumerate() {
        writeln!(out, "{:>2}. {:<24} {:.4}", rank + 1, p.name, p.probability)?;
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<(), Failure> {
    let conv = || -> Result<(Shape, ConvParams), Failure> {
        if a.shape.len() != 4 {
            return Err(Failure::Usage("--shape takes four values n,c,h,w".into()));
        }
        let s = Shape::new(a.shape[0], a.shape[1], a.shape[2], a.shape[3]).map_err(|e| Failure::Usage(e.to_string()))?;
        Ok((s, ConvParams::square(a.filters, a.kernel, a.stride, a.pad)))
    };
    let network = || -> Result<NetworkSpec, Failure> {
        let spec = load_spec(&a.net)?;
        Ok(match a.classes {
            Some(k) => spec.with_classes(k),
            None => spec,
        })
    };
    let report = match a.op {
        BenchOp::ConvCompare => {
            let (s, p) = conv()?;
            let c = eval::compare_conv(s, p, a.iterations, a.warmup, a.seed)?;
            if a.human {
                let mut out = io::stdout().lock();
                print_bench(&mut out, &c.naive)?;
                print_bench(&mut out, &c.im2col)?;
                writeln!(out, "speedup {:.2}x, max |diff| {:.3e}, checksums match: {}", c.speedup, c.max_abs_diff, c.checksums_match)?;
                return Ok(());
            }
            return emit(&c);
        }
        BenchOp::ConvNaive | BenchOp::ConvIm2col => {
            let (s, p) = conv()?;
            let algo = if a.op == BenchOp::ConvNaive { ConvAlgo::Naive } else { ConvAlgo::Im2col };
            eval::bench_conv(algo, s, p, a.iterations, a.warmup, a.seed)?
        }
        BenchOp::Forward | BenchOp::ForwardBackward => eval::bench_network(
            &network()?,
            a.batch,
            a.op == BenchOp::ForwardBackward,
            a.iterations,
            a.warmup,
            a.seed,
        )?,
    };
    if a.human {
        print_bench(&mut io::stdout().lock(), &report)?;
        return Ok(());
    }
    emit(&report)
}

fn print_bench(out: &mut impl Write, r: &eval::BenchReport) -> io::Result<()> {
    let [n, c, h, w] = r.input_shape;
    writeln!(
        out,
        "{:<17} {n}x{c}x{h}x{w} ({})  mean {:.3} ms  p50 {:.3}  p90 {:.3}  p99 {:.3}  {:.2} img/s",
        r.op, r.detail, r.mean_ms, r.p50_ms, r.p90_ms, r.p99_ms, r.throughput
    )
}

fn dataset_cmd(d: DatasetCommand) -> Result<(), Failure> {
    let (manifest, out): (DatasetManifest, PathBuf) = match d {
        DatasetCommand::ImportUec { dir, out } => (data::import_uec(&dir)?, out),
        DatasetCommand::ImportFood101 { dir, out } => (data::import_food101(&dir)?, out),
        DatasetCommand::Split { manifest, scheme, seed, out } => {
            let m = data::load_manifest(&manifest)?;
            (data::fold_split(&m, scheme, seed)?, out)
        }
        DatasetCommand::Synth { out, kind, classes, first, per_class, size, canvas, patch, seed } => {
            let patterns = Pattern::ALL.get(first..first + classes).ok_or_else(|| {
                Failure::Usage(format!("patterns {first}..{} out of range; {} available", first + classes, Pattern::ALL.len()))
            })?;
            let m = match kind {
                SynthKind::Plain => synth::write_plain(&out, patterns, per_class, size, seed)?,
                SynthKind::Cluttered => synth::write_cluttered(&out, patterns, per_class, canvas, patch, seed)?,
            };
            info!("wrote {} images to {}", m.len(), out.display());
            println!("{}", out.join("manifest.jsonl").display());
            return Ok(());
        }
    };
    manifest.validate()?;
    manifest.save(&out)?;
    let count = |sel| manifest.select(sel).len();
    info!(
        "{} samples, {} classes ({} train, {} test) -> {}",
        manifest.len(),
        manifest.class_count(),
        count(SplitSel::Only(data::Split::Train)),
        count(SplitSel::Only(data::Split::Test)),
        out.display()
    );
    println!("{}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct TensorRow {
    name: String,
    shape: [usize; 4],
}

#[derive(Serialize)]
struct Inspection {
    spec: serde_json::Value,
    parameters: usize,
    tensors: Vec<TensorRow>,
}

fn inspect_cmd(a: InspectArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&a.path)?;
    let spec: serde_json::Value = serde_json::from_str(&ck.spec_json).map_err(|e| Failure::Data(e.to_string()))?;
    let tensors: Vec<TensorRow> =
        ck.tensors.iter().map(|(n, t)| TensorRow { name: n.clone(), shape: t.shape().dims() }).collect();
    let parameters = ck.tensors.values().map(|t| t.len()).sum();
    if !a.human {
        return emit(&Inspection { spec, parameters, tensors });
    }
    let mut out = io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(&spec).expect("value serializes"))?;
    for t in &tensors {
        let [n, c, h, w] = t.shape;
        writeln!(out, "{:<40} {n}x{c}x{h}x{w}", t.name)?;
    }
    writeln!(out, "{} tensors, {parameters} parameters", tensors.len())?;
    Ok(())
}

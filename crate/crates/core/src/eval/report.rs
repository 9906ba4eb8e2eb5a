use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::topk::{ranking, topk_hit};
use super::EvalError;
use crate::data::{DatasetManifest, Preprocess, SplitSel};
use crate::net::{LayerGraph, NetError};
use crate::ops::softmax;
use crate::tensor::{Shape, Tensor};

/// Anything that maps a preprocessed batch to logits.
pub trait Classifier: Sync {
    fn classes(&self) -> usize;
    fn preprocess(&self) -> Preprocess;
    fn logits(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>, NetError>;
    fn class_name(&self, index: usize) -> String {
        format!("class_{index}")
    }
}

impl Classifier for LayerGraph<f32> {
    fn classes(&self) -> usize {
        LayerGraph::classes(self)
    }

    fn preprocess(&self) -> Preprocess {
        Preprocess::for_spec(self.spec())
    }

    fn logits(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>, NetError> {
        self.infer(batch)
    }

    fn class_name(&self, index: usize) -> String {
        self.spec().class_name(index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub class: usize,
    pub name: String,
    pub total: usize,
    pub top1_hits: usize,
    pub top5_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    pub hits: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub split: String,
    pub use_bbox: bool,
    pub topk: Vec<usize>,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub split_size: usize,
    pub top1: f64,
    /// Top-5, or top-K when the network has fewer than 5 classes.
    pub top5: f64,
    pub topk: Vec<TopK>,
    pub per_class: Vec<ClassCounts>,
    pub wall_time_s: f64,
    pub config: EvalConfig,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub split: SplitSel,
    pub use_bbox: bool,
    /// Extra cut-offs besides 1 and 5; clamped to the class count.
    pub topk: Vec<usize>,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { split: SplitSel::All, use_bbox: false, topk: vec![1, 5], batch_size: 16 }
    }
}

/// Scores every selected manifest row (one row per box) in inference mode.
pub fn evaluate(
    model: &dyn Classifier,
    manifest: &DatasetManifest,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let start = Instant::now();
    let classes = model.classes();
    if manifest.class_count() != classes {
        return Err(EvalError::Param(format!(
            "network has {classes} classes, manifest has {}",
            manifest.class_count()
        )));
    }
    let members = manifest.select(opts.split);
    if members.is_empty() {
        return Err(EvalError::Data(crate::data::DataError::EmptySplit(format!("no samples match {:?}", opts.split))));
    }
    if opts.batch_size == 0 {
        return Err(EvalError::Param("batch size must be at least 1".into()));
    }
    let mut ks: Vec<usize> = opts.topk.iter().chain(&[1, 5]).map(|&k| k.clamp(1, classes)).collect();
    ks.sort_unstable();
    ks.dedup();
    let (k1, k5) = (1, 5.min(classes));
    let pre = model.preprocess();

    // hits[k index], per-class (total, top1, top5)
    let totals = Mutex::new((vec![0usize; ks.len()], vec![(0usize, 0usize, 0usize); classes]));
    members.par_chunks(opts.batch_size).try_for_each(|chunk| -> Result<(), EvalError> {
        let mut data = Vec::with_capacity(chunk.len() * pre.item_len());
        for &i in chunk {
            let s = &manifest.samples[i];
            let bbox = if opts.use_bbox { s.bbox.as_ref() } else { None };
            let img = pre
                .load(&s.path, bbox)
                .map_err(|e| crate::data::DataError::Sample { sample: s.describe(), source: Box::new(e) })?;
            data.extend(img);
        }
        let shape = Shape::new(chunk.len(), 3, pre.height, pre.width)?;
        let logits = model.logits(&Tensor::from_vec(shape, data)?)?;
        let mut local_hits = vec![0usize; ks.len()];
        let mut local_class = vec![(0usize, 0usize, 0usize); classes];
        for (row, &i) in logits.data().chunks(classes).zip(chunk) {
            let label = manifest.samples[i].label;
            for (h, &k) in local_hits.iter_mut().zip(&ks) {
                *h += topk_hit(row, label, k)? as usize;
            }
            let c = &mut local_class[label];
            c.0 += 1;
            c.1 += topk_hit(row, label, k1)? as usize;
            c.2 += topk_hit(row, label, k5)? as usize;
        }
        let mut t = totals.lock().expect("no panics while holding the lock");
        for (a, b) in t.0.iter_mut().zip(local_hits) {
            *a += b;
        }
        for (a, b) in t.1.iter_mut().zip(local_class) {
            a.0 += b.0;
            a.1 += b.1;
            a.2 += b.2;
        }
        Ok(())
    })?;
    let (hits, per_class) = totals.into_inner().expect("lock not poisoned");
    let n = members.len();
    let frac = |h: usize| h as f64 / n as f64;
    let topk: Vec<TopK> = ks.iter().zip(&hits).map(|(&k, &h)| TopK { k, hits: h, accuracy: frac(h) }).collect();
    let acc_at = |k: usize| topk.iter().find(|t| t.k == k).expect("1 and 5 always scored").accuracy;
    Ok(EvalReport {
        dataset: manifest.provenance.clone(),
        split_size: n,
        top1: acc_at(k1),
        top5: acc_at(k5),
        per_class: per_class
            .into_iter()
            .enumerate()
            .map(|(class, (total, top1_hits, top5_hits))| ClassCounts {
                class,
                name: manifest.classes[class].clone(),
                total,
                top1_hits,
                top5_hits,
            })
            .collect(),
        topk,
        wall_time_s: start.elapsed().as_secs_f64(),
        config: EvalConfig {
            split: match opts.split {
                SplitSel::All => "all".into(),
                SplitSel::Only(s) => format!("{s:?}").to_lowercase(),
            },
            use_bbox: opts.use_bbox,
            topk: ks,
            batch_size: opts.batch_size,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    pub name: String,
    pub probability: f64,
}

/// Top-`k` classes of one preprocessed image, by softmax probability;
/// `k` is clamped to the class count.
pub fn predict_tensor(model: &dyn Classifier, image: &Tensor<f32>, k: usize) -> Result<Vec<Prediction>, EvalError> {
    let classes = model.classes();
    if k == 0 {
        return Err(EvalError::Param("k must be positive".into()));
    }
    let logits = model.logits(image)?.convert::<f64>();
    let probs = softmax(&logits).map_err(NetError::from)?;
    let p = &probs.data()[..classes];
    Ok(ranking(p)
        .into_iter()
        .take(k.min(classes))
        .map(|class| Prediction { class, name: model.class_name(class), probability: p[class] })
        .collect())
}

/// Loads, crops (when `bbox` is given) and classifies one image file.
pub fn predict(
    model: &dyn Classifier,
    path: &std::path::Path,
    bbox: Option<&crate::data::BBox>,
    k: usize,
) -> Result<Vec<Prediction>, EvalError> {
    let pre = model.preprocess();
    let img = pre.to_tensor(pre.load(path, bbox)?);
    predict_tensor(model, &img, k)
}

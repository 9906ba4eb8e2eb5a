//! Shuffled mini-batch iteration.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::image::Preprocess;
use super::manifest::{DatasetManifest, SplitSel};
use super::DataError;
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

/// One mini-batch of preprocessed images and their labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

/// Anything the training loop can pull batches from.
pub trait BatchSource {
    fn next_batch(&mut self) -> Result<Batch, DataError>;
}

/// Endless iterator over the selected samples in seed-determined order.
///
/// Epoch `e` visits the samples in the order produced by shuffling with
/// `seed + e`. The final short batch of an epoch is emitted as-is. Images in
/// a batch are decoded in parallel but assembled in order, so the output
/// never depends on worker count.
pub struct BatchIter {
    manifest: Arc<DatasetManifest>,
    members: Vec<usize>,
    batch_size: usize,
    seed: u64,
    use_bbox: bool,
    pre: Preprocess,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
    cache: Option<HashMap<usize, Arc<Vec<f32>>>>,
    augment: Option<Augment>,
    drawn: u64,
}

/// Training-time transform applied to each preprocessed planar image. The
/// generator is derived from the iterator seed and the sample's position in
/// the stream, so results do not depend on decode order.
pub type Augment = Arc<dyn Fn(&mut [f32], &Preprocess, &mut Rng) + Send + Sync>;

/// Mirrors the image left-to-right with probability one half.
pub fn random_hflip() -> Augment {
    Arc::new(|img: &mut [f32], pre: &Preprocess, rng: &mut Rng| {
        if rng.uniform() < 0.5 {
            for row in img.chunks_mut(pre.width) {
                row.reverse();
            }
        }
    })
}

impl BatchIter {
    pub fn new(
        manifest: Arc<DatasetManifest>,
        split: SplitSel,
        batch_size: usize,
        seed: u64,
        use_bbox: bool,
        pre: Preprocess,
    ) -> Result<Self, DataError> {
        if batch_size == 0 {
            return Err(DataError::Param("batch size must be at least 1".into()));
        }
        let members = manifest.select(split);
        if members.is_empty() {
            return Err(DataError::EmptySplit(format!("no samples match {split:?}")));
        }
        let mut it = BatchIter {
            manifest,
            members,
            batch_size,
            seed,
            use_bbox,
            pre,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
            cache: None,
            augment: None,
            drawn: 0,
        };
        it.start_epoch();
        Ok(it)
    }

    /// Keeps preprocessed samples in memory after first use.
    pub fn cached(mut self) -> Self {
        self.cache = Some(HashMap::new());
        self
    }

    /// Enables a training-time transform; off unless set.
    pub fn with_augment(mut self, augment: Augment) -> Self {
        self.augment = Some(augment);
        self
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.members.len().div_ceil(self.batch_size)
    }

    fn start_epoch(&mut self) {
        self.order = self.members.clone();
        Rng::new(self.seed.wrapping_add(self.epoch)).shuffle(&mut self.order);
        self.pos = 0;
    }

    fn load(&self, idx: usize) -> Result<Arc<Vec<f32>>, DataError> {
        if let Some(v) = self.cache.as_ref().and_then(|c| c.get(&idx)) {
            return Ok(v.clone());
        }
        let s = &self.manifest.samples[idx];
        let bbox = if self.use_bbox { s.bbox.as_ref() } else { None };
        self.pre
            .load(&s.path, bbox)
            .map(Arc::new)
            .map_err(|e| DataError::Sample { sample: s.describe(), source: Box::new(e) })
    }

    fn assemble(&mut self, indices: &[usize]) -> Result<Batch, DataError> {
        let items: Vec<Arc<Vec<f32>>> = indices.par_iter().map(|&i| self.load(i)).collect::<Result<_, _>>()?;
        if let Some(cache) = self.cache.as_mut() {
            for (&i, item) in indices.iter().zip(&items) {
                cache.entry(i).or_insert_with(|| item.clone());
            }
        }
        let mut data = Vec::with_capacity(indices.len() * self.pre.item_len());
        for item in &items {
            let start = data.len();
            data.extend_from_slice(item);
            if let Some(aug) = &self.augment {
                let mut rng = Rng::new(self.seed).fork(self.drawn + 1);
                aug(&mut data[start..], &self.pre, &mut rng);
            }
            self.drawn += 1;
        }
        let shape = Shape::new(indices.len(), 3, self.pre.height, self.pre.width)?;
        Ok(Batch {
            images: Tensor::from_vec(shape, data)?,
            labels: indices.iter().map(|&i| self.manifest.samples[i].label).collect(),
        })
    }
}

impl Iterator for BatchIter {
    type Item = Result<Batch, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.start_epoch();
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.assemble(&indices))
    }
}

impl BatchSource for BatchIter {
    fn next_batch(&mut self) -> Result<Batch, DataError> {
        self.next().expect("batch iterator is endless")
    }
}

/// Preprocesses every selected sample once, in manifest order. Used by
/// evaluation, where order is irrelevant and each sample is seen once.
pub fn load_all(
    manifest: &DatasetManifest,
    split: SplitSel,
    use_bbox: bool,
    pre: &Preprocess,
) -> Result<Vec<(Vec<f32>, usize)>, DataError> {
    manifest
        .select(split)
        .par_iter()
        .map(|&i| {
            let s = &manifest.samples[i];
            let bbox = if use_bbox { s.bbox.as_ref() } else { None };
            pre.load(&s.path, bbox)
                .map(|v| (v, s.label))
                .map_err(|e| DataError::Sample { sample: s.describe(), source: Box::new(e) })
        })
        .collect()
}

/// Per-channel mean of `[0, 1]`-scaled pixels over the selected samples,
/// measured on the cropped (when enabled) and resized network input, before
/// mean subtraction.
pub fn compute_channel_means(
    manifest: &DatasetManifest,
    split: SplitSel,
    use_bbox: bool,
    height: usize,
    width: usize,
) -> Result<[f32; 3], DataError> {
    let members = manifest.select(split);
    if members.is_empty() {
        return Err(DataError::EmptySplit("cannot compute means of an empty split".into()));
    }
    let pre = Preprocess::new(height, width, [0.0; 3]);
    let sums: Vec<[f64; 3]> = members
        .par_iter()
        .map(|&i| {
            let s = &manifest.samples[i];
            let bbox = if use_bbox { s.bbox.as_ref() } else { None };
            let bytes = std::fs::read(&s.path).map_err(|source| DataError::Io { path: s.path.clone(), source })?;
            let v = pre
                .scaled(&super::image::decode(&bytes)?, bbox)
                .map_err(|e| DataError::Sample { sample: s.describe(), source: Box::new(e) })?;
            let mut acc = [0.0f64; 3];
            for (c, plane) in v.chunks(height * width).enumerate() {
                acc[c] = plane.iter().map(|&x| x as f64).sum();
            }
            Ok(acc)
        })
        .collect::<Result<_, DataError>>()?;
    let count = (members.len() * height * width) as f64;
    let mut mean = [0.0f32; 3];
    for c in 0..3 {
        mean[c] = (sums.iter().map(|s| s[c]).sum::<f64>() / count) as f32;
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{BBox, Sample, Split};
    use image::{Rgb, RgbImage};
    use std::path::Path;

    fn write_solid(dir: &Path, name: &str, value: u8, size: u32) -> std::path::PathBuf {
        let p = dir.join(name);
        RgbImage::from_pixel(size, size, Rgb([value; 3])).save(&p).unwrap();
        p
    }

    fn manifest_of(dir: &Path, values: &[u8]) -> DatasetManifest {
        let samples = values
            .iter()
            .enumerate()
            .map(|(i, &v)| Sample {
                path: write_solid(dir, &format!("{i}.png"), v, 8),
                label: i % 2,
                bbox: None,
                split: None,
            })
            .collect();
        DatasetManifest { classes: vec!["a".into(), "b".into()], samples, provenance: "test".into() }
    }

    #[test]
    fn remainder_batches() {
        let dir = tempfile::tempdir().unwrap();
        let m = Arc::new(manifest_of(dir.path(), &[0; 10]));
        let it = BatchIter::new(m, SplitSel::All, 4, 3, false, Preprocess::new(4, 4, [0.0; 3])).unwrap();
        let sizes: Vec<usize> = it.take(6).map(|b| b.unwrap().labels.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2, 4, 4, 2]);
    }

    #[test]
    fn same_seed_same_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<u8> = (0..10).map(|i| i * 20).collect();
        let m = Arc::new(manifest_of(dir.path(), &values));
        let pre = Preprocess::new(4, 4, [0.0; 3]);
        let run = |seed| {
            BatchIter::new(m.clone(), SplitSel::All, 3, seed, false, pre)
                .unwrap()
                .take(8)
                .map(|b| b.unwrap().images.into_data())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
        // Caching does not change the stream.
        let cached: Vec<_> = BatchIter::new(m.clone(), SplitSel::All, 3, 5, false, pre)
            .unwrap()
            .cached()
            .take(8)
            .map(|b| b.unwrap().images.into_data())
            .collect();
        assert_eq!(cached, run(5));
    }

    #[test]
    fn augment_hook() {
        let pre = Preprocess::new(2, 3, [0.0; 3]);
        let mut img: Vec<f32> = (0..18).map(|v| v as f32).collect();
        let flip = random_hflip();
        let mut flipped = 0;
        for s in 0..16 {
            let before = img.clone();
            flip(&mut img, &pre, &mut Rng::new(s));
            if img != before {
                flipped += 1;
                assert_eq!(&before[0..3], &[img[2], img[1], img[0]]);
            }
        }
        assert!(flipped > 0 && flipped < 16);

        let dir = tempfile::tempdir().unwrap();
        let m = Arc::new(manifest_of(dir.path(), &[0, 50, 100, 150]));
        let mark: Augment = Arc::new(|img: &mut [f32], _: &Preprocess, rng: &mut Rng| img[0] = rng.uniform() as f32);
        let run = || {
            BatchIter::new(m.clone(), SplitSel::All, 3, 2, false, Preprocess::new(2, 2, [0.0; 3]))
                .unwrap()
                .with_augment(mark.clone())
                .take(3)
                .map(|b| b.unwrap().images.into_data())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
        let first = &run()[0];
        assert_ne!(first[0], first[12]);
    }

    #[test]
    fn epochs_cover_every_sample() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<u8> = (0..7).map(|i| i * 30).collect();
        let m = Arc::new(manifest_of(dir.path(), &values));
        let mut it = BatchIter::new(m, SplitSel::All, 3, 1, false, Preprocess::new(2, 2, [0.0; 3])).unwrap();
        let mut firsts: Vec<u32> = Vec::new();
        for _ in 0..it.batches_per_epoch() {
            let b = it.next_batch().unwrap();
            for item in b.images.data().chunks(12) {
                firsts.push((item[0] * 255.0).round() as u32);
            }
        }
        firsts.sort();
        assert_eq!(firsts, values.iter().map(|&v| v as u32).collect::<Vec<_>>());
    }

    #[test]
    fn bbox_changes_pixels_and_errors_name_sample() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("half.png");
        RgbImage::from_fn(8, 8, |x, _| if x < 4 { Rgb([0; 3]) } else { Rgb([255; 3]) }).save(&p).unwrap();
        let mut m = DatasetManifest {
            classes: vec!["a".into()],
            samples: vec![Sample { path: p.clone(), label: 0, bbox: Some(BBox::new(4, 0, 8, 8)), split: Some(Split::Train) }],
            provenance: String::new(),
        };
        let pre = Preprocess::new(4, 4, [0.0; 3]);
        let arc = Arc::new(m.clone());
        let plain = BatchIter::new(arc.clone(), SplitSel::All, 1, 0, false, pre).unwrap().next_batch().unwrap();
        let cropped = BatchIter::new(arc, SplitSel::All, 1, 0, true, pre).unwrap().next_batch().unwrap();
        assert_ne!(plain.images, cropped.images);
        assert!(cropped.images.data().iter().all(|&v| v == 1.0));

        m.samples[0].bbox = Some(BBox::new(20, 20, 30, 30));
        let err = BatchIter::new(Arc::new(m.clone()), SplitSel::All, 1, 0, true, pre).unwrap().next_batch().unwrap_err();
        assert!(err.to_string().contains("half.png"), "{err}");
        assert!(BatchIter::new(Arc::new(m), SplitSel::Only(Split::Test), 1, 0, true, pre).is_err());
    }

    #[test]
    fn channel_means() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(compute_channel_means(&manifest_of(dir.path(), &[0, 0]), SplitSel::All, false, 4, 4).unwrap(), [0.0; 3]);
        assert_eq!(compute_channel_means(&manifest_of(dir.path(), &[255, 255]), SplitSel::All, false, 4, 4).unwrap(), [1.0; 3]);
        assert_eq!(compute_channel_means(&manifest_of(dir.path(), &[0, 255]), SplitSel::All, false, 4, 4).unwrap(), [0.5; 3]);
        let mut empty = manifest_of(dir.path(), &[0]);
        empty.samples[0].split = Some(Split::Test);
        assert!(matches!(
            compute_channel_means(&empty, SplitSel::Only(Split::Train), false, 4, 4),
            Err(DataError::EmptySplit(_))
        ));
    }
}

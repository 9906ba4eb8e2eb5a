//! Stratified train/test assignment.

use super::manifest::{DatasetManifest, Split};
use super::DataError;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitScheme {
    /// Cross-validation style: `total` folds, the first `train` of them train.
    Folds { total: usize, train: usize },
    /// First `⌈frac · n_c⌉` of each shuffled class train.
    Fraction(f64),
}

impl SplitScheme {
    pub fn train_ratio(&self) -> f64 {
        match *self {
            SplitScheme::Folds { total, train } => train as f64 / total as f64,
            SplitScheme::Fraction(f) => f,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        match *self {
            SplitScheme::Folds { total, train } if total == 0 || train >= total => Err(DataError::Param(format!(
                "fold scheme needs 0 < train < total, got {train} of {total}"
            ))),
            SplitScheme::Fraction(f) if !(0.0..=1.0).contains(&f) => {
                Err(DataError::Param(format!("train fraction {f} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for SplitScheme {
    type Err = DataError;

    /// `folds:5:3` or `fraction:0.75`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DataError::Param(format!("bad split scheme {s:?}; use folds:TOTAL:TRAIN or fraction:F"));
        let parts: Vec<&str> = s.split(':').collect();
        let scheme = match parts.as_slice() {
            ["folds", total, train] => SplitScheme::Folds {
                total: total.parse().map_err(|_| bad())?,
                train: train.parse().map_err(|_| bad())?,
            },
            ["fraction", f] => SplitScheme::Fraction(f.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

/// Cyclic visiting order of folds. Train folds `0..train` sit at evenly
/// spaced positions, so any prefix of `r` cyclic slots holds
/// `⌊r · train / total⌋` train folds and per-class train counts stay within
/// one of `train/total · n_c`.
fn fold_cycle(total: usize, train: usize) -> Vec<usize> {
    let (mut next_train, mut next_test) = (0, train);
    (0..total)
        .map(|p| {
            if (p + 1) * train / total > p * train / total {
                next_train += 1;
                next_train - 1
            } else {
                next_test += 1;
                next_test - 1
            }
        })
        .collect()
}

/// Assigns every sample to train or test, stratified by class.
///
/// Each class's samples (in manifest order) are shuffled by one generator
/// seeded with `seed`, classes taken in index order.
pub fn fold_split(manifest: &DatasetManifest, scheme: SplitScheme, seed: u64) -> Result<DatasetManifest, DataError> {
    scheme.validate()?;
    if manifest.is_empty() {
        return Err(DataError::EmptySplit("cannot split an empty manifest".into()));
    }
    let mut out = manifest.clone();
    let mut rng = Rng::new(seed);
    let cycle = match scheme {
        SplitScheme::Folds { total, train } => fold_cycle(total, train),
        SplitScheme::Fraction(_) => Vec::new(),
    };
    for class in 0..manifest.class_count() {
        let mut members: Vec<usize> = (0..manifest.len()).filter(|&i| manifest.samples[i].label == class).collect();
        rng.shuffle(&mut members);
        let n = members.len();
        for (pos, &i) in members.iter().enumerate() {
            let train = match scheme {
                SplitScheme::Folds { train, .. } => cycle[pos % cycle.len()] < train,
                SplitScheme::Fraction(f) => pos < ((f * n as f64) - 1e-9).ceil().max(0.0) as usize,
            };
            out.samples[i].split = Some(if train { Split::Train } else { Split::Test });
        }
    }
    Ok(out)
}

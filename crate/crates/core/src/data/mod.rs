//! Dataset manifests, image preprocessing, splits and batching.

mod batch;
mod image;
mod import;
mod manifest;
mod split;
pub mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

pub use self::image::{bbox_crop, decode, decode_resize, resize_bilinear, Preprocess};
pub use batch::{compute_channel_means, load_all, random_hflip, Augment, Batch, BatchIter, BatchSource};
pub use import::{import_food101, import_uec};
pub use manifest::{header_path, load_manifest, parse_manifest, BBox, DatasetManifest, Sample, Split, SplitSel};
pub use split::{fold_split, SplitScheme};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("manifest header: {0}")]
    Header(String),
    #[error("image format: {0}")]
    Format(String),
    #[error("empty bounding box: {0}")]
    EmptyBox(String),
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("sample {sample}: {source}")]
    Sample { sample: String, source: Box<DataError> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

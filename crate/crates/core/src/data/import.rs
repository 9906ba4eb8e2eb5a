//! Converters from public dataset layouts to a manifest.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::manifest::{BBox, DatasetManifest, Sample, Split};
use super::DataError;

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

fn format_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> DataError {
    DataError::Format(format!("{}:{line}: {msg}", path.display()))
}

/// UEC-Food layout: `category.txt` (header line, then `id<TAB>name`) and one
/// directory per id holding images and `bb_info.txt` (header line, then
/// `img x1 y1 x2 y2`). An image boxed under several categories yields one
/// sample per box.
pub fn import_uec(root: &Path) -> Result<DatasetManifest, DataError> {
    let cat_path = root.join("category.txt");
    let mut categories: Vec<(String, String)> = Vec::new();
    for (i, line) in read(&cat_path)?.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (id, name) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| format_err(&cat_path, i + 1, "expected `id name`"))?;
        categories.push((id.to_string(), name.trim().to_string()));
    }
    if categories.is_empty() {
        return Err(format_err(&cat_path, 1, "no categories"));
    }
    let mut samples = Vec::new();
    for (label, (id, _)) in categories.iter().enumerate() {
        let dir = root.join(id);
        let bb_path = dir.join("bb_info.txt");
        for (i, line) in read(&bb_path)?.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 5 {
                return Err(format_err(&bb_path, i + 1, "expected `img x1 y1 x2 y2`"));
            }
            let mut c = [0i64; 4];
            for (k, f) in fields[1..].iter().enumerate() {
                c[k] = f.parse().map_err(|_| format_err(&bb_path, i + 1, format!("bad coordinate {f:?}")))?;
            }
            samples.push(Sample {
                path: dir.join(format!("{}.jpg", fields[0])),
                label,
                bbox: Some(BBox::from(c)),
                split: None,
            });
        }
    }
    Ok(DatasetManifest {
        classes: categories.into_iter().map(|(_, name)| name).collect(),
        samples,
        provenance: "uec-food".into(),
    })
}

/// Food-101 layout: `meta/classes.txt`, `meta/{train,test}.txt` listing
/// `class/id`, images at `images/class/id.jpg`. The official split is kept.
pub fn import_food101(root: &Path) -> Result<DatasetManifest, DataError> {
    let meta = root.join("meta");
    let classes: Vec<String> = read(&meta.join("classes.txt"))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut samples = Vec::new();
    for (file, split) in [("train.txt", Split::Train), ("test.txt", Split::Test)] {
        let path = meta.join(file);
        for (i, line) in read(&path)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (class, _) = line
                .split_once('/')
                .ok_or_else(|| format_err(&path, i + 1, "expected `class/id`"))?;
            let label = *index
                .get(class)
                .ok_or_else(|| format_err(&path, i + 1, format!("unknown class {class:?}")))?;
            let img: PathBuf = root.join("images").join(format!("{line}.jpg"));
            samples.push(Sample { path: img, label, bbox: None, split: Some(split) });
        }
    }
    Ok(DatasetManifest { classes, samples, provenance: "food-101".into() })
}

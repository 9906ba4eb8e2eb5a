//! JSON-lines dataset manifests.
//!
//! A manifest `foo.jsonl` holds one sample per line:
//!
//! ```text
//! {"path": "img/001.png", "label": "ramen", "bbox": [x1, y1, x2, y2] | null, "split": "train"}
//! ```
//!
//! `split` is optional. Relative paths resolve against the manifest's
//! directory. The class dictionary lives next to it in `foo.header.json`:
//! `{"classes": ["ramen", "sushi"], "provenance": "uec256"}`. `classes` may
//! also be an object mapping names to dense indices. Without a header the
//! classes are the sorted set of labels that appear.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::DataError;

/// Axis-aligned box, `[x1, x2) × [y1, y2)` in pixels with the origin at the
/// top-left. Coordinates may fall outside the image; they are clamped on use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 4]", into = "[i64; 4]")]
pub struct BBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl From<[i64; 4]> for BBox {
    fn from(v: [i64; 4]) -> Self {
        BBox { x1: v[0], y1: v[1], x2: v[2], y2: v[3] }
    }
}

impl From<BBox> for [i64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    /// Clamps to a `width × height` image. `None` when nothing is left.
    pub fn clamp(&self, width: u32, height: u32) -> Option<BBox> {
        let x1 = self.x1.clamp(0, width as i64);
        let x2 = self.x2.clamp(0, width as i64);
        let y1 = self.y1.clamp(0, height as i64);
        let y2 = self.y2.clamp(0, height as i64);
        (x1 < x2 && y1 < y2).then_some(BBox { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> i64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> i64 {
        self.y2 - self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Which samples an operation reads. Samples without an assigned split
/// match every selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSel {
    All,
    Only(Split),
}

impl SplitSel {
    pub fn matches(self, split: Option<Split>) -> bool {
        match (self, split) {
            (SplitSel::All, _) | (_, None) => true,
            (SplitSel::Only(want), Some(s)) => want == s,
        }
    }
}

impl std::str::FromStr for SplitSel {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(SplitSel::All),
            "train" => Ok(SplitSel::Only(Split::Train)),
            "test" => Ok(SplitSel::Only(Split::Test)),
            other => Err(DataError::Param(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub path: PathBuf,
    pub label: usize,
    pub bbox: Option<BBox>,
    pub split: Option<Split>,
}

impl Sample {
    /// Identity used in error messages.
    pub fn describe(&self) -> String {
        match self.bbox {
            Some(b) => format!("{} [{} {} {} {}]", self.path.display(), b.x1, b.y1, b.x2, b.y2),
            None => self.path.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    /// Class names; a class's index is its position.
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
    pub provenance: String,
}

#[derive(Serialize, Deserialize)]
struct Row {
    path: String,
    label: String,
    #[serde(default)]
    bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ClassList {
    Names(Vec<String>),
    Indexed(IndexMap<String, usize>),
}

#[derive(Deserialize)]
struct Header {
    classes: ClassList,
    #[serde(default)]
    provenance: String,
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    classes: &'a [String],
    provenance: &'a str,
}

/// `foo.jsonl` → `foo.header.json`.
pub fn header_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("header.json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

fn parse_header(text: &str) -> Result<(Vec<String>, String), DataError> {
    let header: Header = serde_json::from_str(text).map_err(|e| DataError::Header(e.to_string()))?;
    let classes = match header.classes {
        ClassList::Names(names) => names,
        ClassList::Indexed(map) => {
            let mut names = vec![None; map.len()];
            for (name, idx) in map {
                match names.get_mut(idx) {
                    Some(slot @ None) => *slot = Some(name),
                    _ => {
                        return Err(DataError::Header(format!(
                            "class indices are not dense in [0, {}): {name} -> {idx}",
                            names.len()
                        )))
                    }
                }
            }
            names.into_iter().map(|n| n.expect("all slots filled")).collect()
        }
    };
    let mut seen = HashSet::new();
    if let Some(dup) = classes.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(DataError::Header(format!("duplicate class {dup:?}")));
    }
    Ok((classes, header.provenance))
}

impl DatasetManifest {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self) -> HashMap<&str, usize> {
        self.classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of samples matching `sel`, in manifest order.
    pub fn select(&self, sel: SplitSel) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| sel.matches(self.samples[i].split)).collect()
    }

    /// Checks the type invariants: labels in range, no duplicate
    /// path + box pairs.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= self.classes.len() {
                return Err(DataError::Manifest {
                    line: i + 1,
                    msg: format!("label index {} outside {} classes", s.label, self.classes.len()),
                });
            }
            if !seen.insert((s.path.clone(), s.bbox)) {
                return Err(DataError::Manifest {
                    line: i + 1,
                    msg: format!("duplicate sample {}", s.describe()),
                });
            }
        }
        Ok(())
    }

    /// Writes the manifest and its header. Paths under the manifest's
    /// directory are stored relative to it.
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let mut out = Vec::new();
        for s in &self.samples {
            let rel = s.path.strip_prefix(dir).unwrap_or(&s.path);
            let row = Row {
                path: rel.to_string_lossy().into_owned(),
                label: self.classes[s.label].clone(),
                bbox: s.bbox,
                split: s.split,
            };
            serde_json::to_writer(&mut out, &row).expect("rows serialize");
            out.push(b'\n');
        }
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(io_err(path))?;
        let header = HeaderOut { classes: &self.classes, provenance: &self.provenance };
        let hp = header_path(path);
        fs::write(&hp, serde_json::to_string_pretty(&header).expect("header serializes"))
            .map_err(io_err(&hp))
    }
}

/// Parses a manifest and its optional header.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let hp = header_path(path);
    let header = match fs::read_to_string(&hp) {
        Ok(h) => Some(parse_header(&h)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(DataError::Io { path: hp, source: e }),
    };
    let dir = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, header, dir)
}

fn bad_bbox_field(line: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("bbox").cloned())
        .is_some_and(|b| !b.is_null() && serde_json::from_value::<BBox>(b).is_err())
}

/// Parses manifest text. `header` is `(classes, provenance)`; relative paths
/// are joined onto `dir`.
pub fn parse_manifest(
    text: &str,
    header: Option<(Vec<String>, String)>,
    dir: &Path,
) -> Result<DatasetManifest, DataError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(line).map_err(|e| {
            let msg = if bad_bbox_field(line) {
                format!("malformed bbox: {e}")
            } else {
                e.to_string()
            };
            DataError::Manifest { line: i + 1, msg }
        })?;
        if let Some(b) = row.bbox {
            if b.x1 >= b.x2 || b.y1 >= b.y2 {
                return Err(DataError::Manifest {
                    line: i + 1,
                    msg: format!("malformed bbox [{}, {}, {}, {}]: needs x1 < x2 and y1 < y2", b.x1, b.y1, b.x2, b.y2),
                });
            }
        }
        rows.push((i + 1, row));
    }
    let (classes, provenance) = match header {
        Some(h) => h,
        None => {
            let names: BTreeSet<&str> = rows.iter().map(|(_, r)| r.label.as_str()).collect();
            (names.into_iter().map(str::to_string).collect(), String::new())
        }
    };
    let index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut samples = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        let label = *index.get(row.label.as_str()).ok_or_else(|| DataError::Manifest {
            line: *line,
            msg: format!("unknown class {:?}", row.label),
        })?;
        let raw = PathBuf::from(&row.path);
        let path = if raw.is_absolute() { raw } else { dir.join(raw) };
        samples.push(Sample { path, label, bbox: row.bbox, split: row.split });
    }
    let manifest = DatasetManifest { classes, samples, provenance };
    manifest.validate().map_err(|e| match e {
        DataError::Manifest { line, msg } => DataError::Manifest { line: rows[line - 1].0, msg },
        other => other,
    })?;
    Ok(manifest)
}

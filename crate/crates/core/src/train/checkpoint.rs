//! Binary checkpoint format.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "DFCK" | version | spec_len | spec JSON (UTF-8) | count
//! count × ( name_len | name (UTF-8) | n | c | h | w | n·c·h·w × f32 LE )
//! ```

use std::path::Path;

use indexmap::IndexMap;

use super::TrainError;
use crate::net::{Init, LayerGraph, NetworkSpec};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"DFCK";
pub const VERSION: u32 = 1;

/// A network spec plus its named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Spec JSON exactly as stored.
    pub spec_json: String,
    pub tensors: IndexMap<String, Tensor<f32>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            TrainError::Truncated(format!("{what} needs {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, n: usize, what: &str) -> Result<String, TrainError> {
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| TrainError::Inconsistent(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn from_graph(graph: &LayerGraph<f32>) -> Self {
        Checkpoint {
            spec_json: graph.spec().to_json(),
            tensors: graph.params().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn spec(&self) -> Result<NetworkSpec, TrainError> {
        Ok(NetworkSpec::from_json(&self.spec_json)?)
    }

    /// Rebuilds the graph the checkpoint was taken from.
    pub fn to_graph(&self) -> Result<LayerGraph<f32>, TrainError> {
        let mut graph = LayerGraph::new(self.spec()?, Init::Zeros)?;
        let expected: Vec<String> = graph.param_names().map(String::from).collect();
        let mut problems: Vec<String> = expected.iter().filter(|n| !self.tensors.contains_key(*n)).map(|n| format!("{n} (missing)")).collect();
        problems.extend(self.tensors.keys().filter(|n| !expected.contains(n)).map(|n| format!("{n} (unexpected)")));
        for (name, t) in &self.tensors {
            if let Some(p) = graph.param(name) {
                if p.shape() != t.shape() {
                    problems.push(format!("{name} ({} in file, {} in network)", t.shape(), p.shape()));
                }
            }
        }
        if !problems.is_empty() {
            return Err(TrainError::Mismatch(problems));
        }
        for (name, t) in &self.tensors {
            graph.set_param(name, t.clone())?;
        }
        Ok(graph)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.tensors.iter().map(|(n, t)| 4 + n.len() + 16 + 4 * t.len()).sum();
        let mut out = Vec::with_capacity(16 + self.spec_json.len() + payload);
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        out.extend_from_slice(MAGIC);
        u32le(&mut out, VERSION as usize);
        u32le(&mut out, self.spec_json.len());
        out.extend_from_slice(self.spec_json.as_bytes());
        u32le(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            u32le(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            for d in t.shape().dims() {
                u32le(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(TrainError::NotCheckpoint);
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(TrainError::Version { found: version, supported: VERSION });
        }
        let spec_len = r.u32("spec length")? as usize;
        let spec_json = r.string(spec_len, "spec")?;
        let count = r.u32("tensor count")?;
        let mut tensors = IndexMap::new();
        for i in 0..count {
            let name_len = r.u32("tensor name length")? as usize;
            let name = r.string(name_len, &format!("name of tensor {i}"))?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32(&format!("dims of {name}"))? as usize;
            }
            let shape = Shape::from_dims(dims).map_err(|e| TrainError::Inconsistent(format!("{name}: {e}")))?;
            let n = shape.element_count();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| TrainError::Inconsistent(format!("{name}: dims overflow")))?, &format!("data of {name}"))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            if tensors.insert(name.clone(), Tensor::from_vec(shape, data)?).is_some() {
                return Err(TrainError::Inconsistent(format!("tensor {name} appears twice")));
            }
        }
        if r.pos != bytes.len() {
            return Err(TrainError::Inconsistent(format!("{} trailing bytes after last tensor", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { spec_json, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes)
    }
}

pub fn checkpoint_save(graph: &LayerGraph<f32>, path: &Path) -> Result<(), TrainError> {
    Checkpoint::from_graph(graph).save(path)
}

pub fn checkpoint_load(path: &Path) -> Result<LayerGraph<f32>, TrainError> {
    Checkpoint::load(path)?.to_graph()
}

//! Named tensors stored as one flat little-endian f32 file plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("weight file holds {actual} bytes, manifest expects {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("missing tensor {0}")]
    Missing(String),
    #[error("tensor {name} has shape {actual:?}, expected {expected:?}")]
    Shape { name: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error("tensor {0} holds a non-finite value")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorStore {
    entries: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub meta: serde_json::Value,
}

/// Rounds through f32 so stored and in-memory values agree after a save/load.
pub fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], values: &[f64]) {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "shape/value count for {name}");
        let data = values.iter().map(|&v| v as f32).collect();
        self.entries.retain(|(n, ..)| n != name);
        self.entries.push((name.to_string(), shape.to_vec(), data));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, ..)| n.as_str())
    }

    pub fn get(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>, WeightsError> {
        let (_, s, data) = self
            .entries
            .iter()
            .find(|(n, ..)| n == name)
            .ok_or_else(|| WeightsError::Missing(name.to_string()))?;
        if s != shape {
            return Err(WeightsError::Shape { name: name.to_string(), expected: shape.to_vec(), actual: s.clone() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(WeightsError::NonFinite(name.to_string()));
        }
        Ok(data.iter().map(|&v| v as f64).collect())
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0;
        let tensors = self
            .entries
            .iter()
            .map(|(name, shape, data)| {
                let e = TensorEntry { name: name.clone(), shape: shape.clone(), offset };
                offset += data.len();
                e
            })
            .collect();
        Manifest { tensors, meta: self.meta.clone() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.entries.iter().flat_map(|(.., d)| d.iter().flat_map(|v| v.to_le_bytes())).collect()
    }

    pub fn from_parts(manifest: &Manifest, bytes: &[u8]) -> Result<Self, WeightsError> {
        let total: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if bytes.len() != total * 4 {
            return Err(WeightsError::SizeMismatch { expected: total * 4, actual: bytes.len() });
        }
        let floats: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut entries = Vec::with_capacity(manifest.tensors.len());
        for t in &manifest.tensors {
            let n: usize = t.shape.iter().product();
            let slice = floats.get(t.offset..t.offset + n).ok_or(WeightsError::SizeMismatch {
                expected: (t.offset + n) * 4,
                actual: bytes.len(),
            })?;
            entries.push((t.name.clone(), t.shape.clone(), slice.to_vec()));
        }
        Ok(Self { entries, meta: manifest.meta.clone() })
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<(), WeightsError> {
        let (bin, json) = paths(stem);
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(&bin, self.to_bytes()).map_err(|source| WeightsError::Io { path: bin.clone(), source })?;
        fs::write(&json, manifest).map_err(|source| WeightsError::Io { path: json.clone(), source })?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self, WeightsError> {
        let (bin, json) = paths(stem);
        let text = fs::read_to_string(&json).map_err(|source| WeightsError::Io { path: json.clone(), source })?;
        let bytes = fs::read(&bin).map_err(|source| WeightsError::Io { path: bin.clone(), source })?;
        Self::from_parts(&serde_json::from_str(&text)?, &bytes)
    }
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

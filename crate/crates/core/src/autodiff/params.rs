use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// A store with the same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (n, t) in self.iter() {
            out.insert(n, Tensor::zeros(t.shape())).expect("names are unique");
        }
        out
    }

    /// All parameters concatenated in store order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites every parameter from a flat vector laid out as [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Dimension(format!(
                "flat vector has {} entries, store holds {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Writes `<stem>.json` (name → shape manifest) and `<stem>.bin`
    /// (little-endian f64, concatenated in manifest order).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let manifest = CheckpointManifest {
            params: self
                .iter()
                .map(|(n, t)| ManifestEntry {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json_path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&json_path, e))?;
        fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
        let bin_path = dir.join(format!("{stem}.bin"));
        fs::write(&bin_path, f64s_to_bytes(&self.flatten())).map_err(|e| Error::io(&bin_path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json_path = dir.join(format!("{stem}.json"));
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let manifest: CheckpointManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(&json_path, e))?;
        let bin_path = dir.join(format!("{stem}.bin"));
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let total: usize = manifest
            .params
            .iter()
            .map(|e| e.shape.iter().product::<usize>())
            .sum();
        if bytes.len() != total * 8 {
            return Err(Error::SizeMismatch {
                path: bin_path,
                expected: total * 8,
                found: bytes.len(),
            });
        }
        let flat = bytes_to_f64s(&bytes);
        let mut store = Self::new();
        let mut off = 0;
        for e in manifest.params {
            let n: usize = e.shape.iter().product();
            store.insert(e.name, Tensor::new(e.shape, flat[off..off + n].to_vec())?)?;
            off += n;
        }
        Ok(store)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    params: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

pub(crate) fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ParameterStore::new();
        s.insert("a", Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.0, 1e-300]).unwrap())
            .unwrap();
        s.insert("b", Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap())
            .unwrap();
        s.save(dir.path(), "p").unwrap();
        let back = ParameterStore::load(dir.path(), "p").unwrap();
        assert_eq!(back, s);

        let bin = dir.path().join("p.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            ParameterStore::load(dir.path(), "p"),
            Err(Error::SizeMismatch { .. })
        ));
    }
}

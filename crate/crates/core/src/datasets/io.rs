//! On-disk dataset format: `manifest.json` plus four little-endian `f64`
//! blobs (`xs.bin`, `fs.bin`, `ys.bin`, `tfs.bin`), each laid out as
//! `[n_train + n_test, count, dim]` with training functions first.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{bytes_to_f64s, f64s_to_bytes};
use crate::error::{Error, Result};
use crate::sample::SampleSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub m: usize,
    pub p: usize,
    pub x_dim: usize,
    pub y_dim: usize,
    pub d_in: usize,
    pub d_out: usize,
    /// Generator parameters (ranges, grid sizes, PDE constants).
    pub params: serde_json::Value,
    pub seed: u64,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config(format!(
                "dataset {:?} needs n_train ≥ 1 and n_test ≥ 1",
                self.name
            )));
        }
        for (k, v) in [
            ("m", self.m),
            ("p", self.p),
            ("x_dim", self.x_dim),
            ("y_dim", self.y_dim),
            ("d_in", self.d_in),
            ("d_out", self.d_out),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("manifest field {k} must be ≥ 1")));
            }
        }
        Ok(())
    }

    fn check_sample(&self, s: &SampleSet, index: usize) -> Result<()> {
        let expect = [
            [self.m, self.x_dim],
            [self.m, self.d_in],
            [self.p, self.y_dim],
            [self.p, self.d_out],
        ];
        for (t, e) in [&s.xs, &s.fs, &s.ys, &s.tfs].iter().zip(expect) {
            if t.shape() != e {
                return Err(Error::Dimension(format!(
                    "sample {index} has shape {:?}, manifest declares {:?}",
                    t.shape(),
                    e
                )));
            }
        }
        Ok(())
    }
}

/// A manifest with its train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<SampleSet>,
    pub test: Vec<SampleSet>,
}

impl Dataset {
    pub fn new(manifest: Manifest, train: Vec<SampleSet>, test: Vec<SampleSet>) -> Result<Self> {
        manifest.validate()?;
        if train.len() != manifest.n_train || test.len() != manifest.n_test {
            return Err(Error::Config(format!(
                "manifest declares {}/{} functions, got {}/{}",
                manifest.n_train,
                manifest.n_test,
                train.len(),
                test.len()
            )));
        }
        for (i, s) in train.iter().chain(&test).enumerate() {
            manifest.check_sample(s, i)?;
        }
        Ok(Dataset {
            manifest,
            train,
            test,
        })
    }
}

const BLOBS: [&str; 4] = ["xs.bin", "fs.bin", "ys.bin", "tfs.bin"];

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let man = &dataset.manifest;
    man.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blobs: [Vec<f64>; 4] = Default::default();
    for (i, s) in dataset.train.iter().chain(&dataset.test).enumerate() {
        man.check_sample(s, i)?;
        for (b, t) in blobs.iter_mut().zip([&s.xs, &s.fs, &s.ys, &s.tfs]) {
            b.extend_from_slice(t.data());
        }
    }
    for (name, data) in BLOBS.iter().zip(&blobs) {
        let path = dir.join(name);
        fs::write(&path, f64s_to_bytes(data)).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(man).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let man: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    man.validate()?;
    Ok(man)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let man = read_manifest(dir)?;
    let n = man.n_train + man.n_test;
    let dims = [
        (man.m, man.x_dim),
        (man.m, man.d_in),
        (man.p, man.y_dim),
        (man.p, man.d_out),
    ];
    let mut blobs = Vec::with_capacity(4);
    for (name, (count, dim)) in BLOBS.iter().zip(dims) {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = n * count * dim * 8;
        if bytes.len() != expected {
            return Err(Error::SizeMismatch {
                path: path.clone(),
                expected,
                found: bytes.len(),
            });
        }
        blobs.push(bytes_to_f64s(&bytes));
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let take = |b: usize| {
            let (count, dim) = dims[b];
            let len = count * dim;
            Tensor::from_parts(vec![count, dim], blobs[b][i * len..(i + 1) * len].to_vec())
        };
        samples.push(SampleSet::new(take(0), take(1), take(2), take(3))?);
    }
    let test = samples.split_off(man.n_train);
    Dataset::new(man, samples, test)
}

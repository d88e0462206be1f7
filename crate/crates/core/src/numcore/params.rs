//! Named parameter store and its on-disk checkpoint format.
//!
//! A checkpoint is two files:
//!
//! * a textual manifest,
//!   ```text
//!   ratchet-checkpoint 1
//!   dtype f32
//!   cls 1,64 0
//!   encoder.0.attn.wq 64,64 256
//!   ```
//!   one `name shape byte_offset` line per tensor, in name order (`scalar`
//!   stands for an empty shape);
//! * a little-endian blob of all values concatenated in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::tape::{Tape, Var};
use crate::numcore::tensor::Tensor;
use crate::scalar::Scalar;

const MAGIC: &str = "ratchet-checkpoint 1";

/// Ordered map from parameter name to value.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T: Scalar> {
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Tape handles for every entry of a [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Records every parameter as a leaf; trainable when `requires_grad`.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> BoundParams {
        let vars = self.tensors.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone(), requires_grad))).collect();
        BoundParams { vars }
    }

    /// Gradients of every bound parameter after `tape.backward`.
    pub fn grads_from(&self, tape: &Tape<T>, bound: &BoundParams) -> ParamStore<T> {
        ParamStore { tensors: bound.vars.iter().map(|(k, &v)| (k.clone(), tape.grad(v))).collect() }
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamStore<T> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect() }
    }

    pub fn to_bytes(&self) -> (String, Vec<u8>) {
        let mut manifest = format!("{MAGIC}\ndtype {}\n", T::DTYPE);
        let mut blob = Vec::with_capacity(self.numel() * T::BYTES);
        for (name, t) in &self.tensors {
            let shape = if t.shape().is_empty() {
                "scalar".to_string()
            } else {
                t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            };
            manifest.push_str(&format!("{name} {shape} {}\n", blob.len()));
            for &v in t.data() {
                v.write_le(&mut blob);
            }
        }
        (manifest, blob)
    }

    pub fn from_bytes(manifest: &str, blob: &[u8]) -> Result<Self> {
        let mut lines = manifest.lines().enumerate();
        let bad = |line: usize, message: String| Error::Parse { line: line + 1, message };
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(bad(0, "missing checkpoint header".into())),
        }
        match lines.next() {
            Some((_, l)) if l.trim() == format!("dtype {}", T::DTYPE) => {}
            Some((i, l)) => return Err(bad(i, format!("checkpoint has `{l}`, expected dtype {}", T::DTYPE))),
            None => return Err(bad(1, "missing dtype line".into())),
        }
        let mut tensors = BTreeMap::new();
        let mut expected_offset = 0usize;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [name, shape, offset] = fields[..] else {
                return Err(bad(i, format!("expected `name shape offset`, got `{line}`")));
            };
            let shape: Vec<usize> = if shape == "scalar" {
                Vec::new()
            } else {
                shape.split(',').map(str::parse).collect::<Result<_, _>>().map_err(|e| bad(i, format!("shape: {e}")))?
            };
            let offset: usize = offset.parse().map_err(|e| bad(i, format!("offset: {e}")))?;
            if offset != expected_offset {
                return Err(bad(i, format!("offset {offset} breaks manifest order (expected {expected_offset})")));
            }
            let n: usize = shape.iter().product();
            let end = offset + n * T::BYTES;
            if end > blob.len() {
                return Err(bad(i, format!("{name} runs past the end of the blob")));
            }
            let data = blob[offset..end].chunks_exact(T::BYTES).map(T::read_le).collect();
            tensors.insert(name.to_string(), Tensor::new(shape, data)?);
            expected_offset = end;
        }
        if expected_offset != blob.len() {
            return Err(Error::Contract(format!("blob has {} trailing bytes", blob.len() - expected_offset)));
        }
        Ok(ParamStore { tensors })
    }

    pub fn save(&self, manifest_path: &Path, blob_path: &Path) -> Result<()> {
        let (manifest, blob) = self.to_bytes();
        fs::write(manifest_path, manifest).map_err(|e| Error::io(manifest_path, e))?;
        fs::write(blob_path, blob).map_err(|e| Error::io(blob_path, e))?;
        Ok(())
    }

    pub fn load(manifest_path: &Path, blob_path: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
        Self::from_bytes(&manifest, &blob)
    }
}

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};
use crate::scalar::Scalar;

/// Per-entry trainability flags; gradients of `false` entries are zeroed.
#[derive(Clone, Debug, PartialEq)]
pub struct ChildMask {
    keep: BTreeMap<String, Vec<bool>>,
}

impl ChildMask {
    /// Keeps the `round(keep_fraction · N)` highest-scoring entries across all
    /// tensors (at least one); ties go to the earlier name, then the earlier index.
    pub fn top_fraction<T: Scalar>(scores: &ParamStore<T>, keep_fraction: f64) -> Result<Self> {
        if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
            return Err(Error::Config(format!("keep fraction must lie in (0, 1], got {keep_fraction}")));
        }
        let mut entries: Vec<(T, usize, usize)> = Vec::with_capacity(scores.numel());
        let names: Vec<&str> = scores.names().collect();
        for (ti, (_, t)) in scores.iter().enumerate() {
            entries.extend(t.data().iter().enumerate().map(|(i, &s)| (s, ti, i)));
        }
        let n_keep = ((keep_fraction * entries.len() as f64).round() as usize).clamp(1, entries.len().max(1));
        // Stable sort on descending score keeps (name, index) order among ties.
        entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut keep: BTreeMap<String, Vec<bool>> =
            scores.iter().map(|(n, t)| (n.to_string(), vec![false; t.numel()])).collect();
        for &(_, ti, i) in entries.iter().take(n_keep) {
            keep.get_mut(names[ti]).expect("known name")[i] = true;
        }
        Ok(ChildMask { keep })
    }

    pub fn all<T: Scalar>(like: &ParamStore<T>) -> Self {
        ChildMask { keep: like.iter().map(|(n, t)| (n.to_string(), vec![true; t.numel()])).collect() }
    }

    pub fn get(&self, name: &str) -> Option<&[bool]> {
        self.keep.get(name).map(Vec::as_slice)
    }

    /// Fraction of kept entries.
    pub fn density(&self) -> f64 {
        let total: usize = self.keep.values().map(Vec::len).sum();
        let kept: usize = self.keep.values().map(|v| v.iter().filter(|&&k| k).count()).sum();
        kept as f64 / total.max(1) as f64
    }

    /// Zeroes every gradient entry outside the mask.
    pub fn apply<T: Scalar>(&self, grads: &mut ParamStore<T>) -> Result<()> {
        for (name, g) in grads.iter_mut() {
            let keep = self.keep.get(name).ok_or_else(|| Error::Shape(format!("child mask lacks {name}")))?;
            if keep.len() != g.numel() {
                return Err(Error::Shape(format!("child mask for {name} has {} entries, gradient {}", keep.len(), g.numel())));
            }
            for (v, &k) in g.data_mut().iter_mut().zip(keep) {
                if !k {
                    *v = T::zero();
                }
            }
        }
        Ok(())
    }

    /// As a 0/1 tensor store, for checkpointing.
    pub fn to_store(&self) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        for (n, k) in &self.keep {
            s.insert(n.clone(), Tensor::new(vec![k.len()], k.iter().map(|&b| b as u8 as f32).collect()).expect("1-d"));
        }
        s
    }

    pub fn from_store(s: &ParamStore<f32>) -> Self {
        ChildMask { keep: s.iter().map(|(n, t)| (n.to_string(), t.data().iter().map(|&v| v != 0.0).collect())).collect() }
    }
}

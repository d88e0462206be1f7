//! Inverse-class-frequency sampling weights.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};

/// Weight `1/n_c` for every sample of class `c`, normalized to sum to one, so each
/// class carries half the total mass.
pub fn sampler_weights(labels: &[u8]) -> Result<Vec<f64>> {
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::DegenerateCohort(format!("sampler needs both classes, got n0={n0}, n1={n1}")));
    }
    let (w0, w1) = (0.5 / n0 as f64, 0.5 / n1 as f64);
    Ok(labels.iter().map(|&y| if y == 1 { w1 } else { w0 }).collect())
}

/// Draws indices with replacement according to `weights`.
#[derive(Clone, Debug)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let dist = WeightedIndex::new(weights).map_err(|e| Error::Config(format!("sampler weights: {e}")))?;
        Ok(WeightedSampler { dist })
    }

    pub fn balanced(labels: &[u8]) -> Result<Self> {
        Self::new(&sampler_weights(labels)?)
    }

    pub fn draw(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..n).map(|_| self.dist.sample(rng)).collect()
    }
}

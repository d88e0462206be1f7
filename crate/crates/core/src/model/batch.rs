use crate::cohort::TimeframeTensor;
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::scalar::Scalar;

/// Stays stacked for one forward pass.
#[derive(Clone, Debug)]
pub struct Batch<T: Scalar> {
    /// `[B·P, l]`, stay-major.
    pub values: Tensor<T>,
    /// `B·P` flags, true for real timeframes.
    pub pad_mask: Vec<bool>,
    pub labels: Vec<u8>,
    pub b: usize,
    pub p: usize,
    pub k: usize,
    pub m: usize,
}

impl<T: Scalar> Batch<T> {
    pub fn new(stays: &[&TimeframeTensor]) -> Result<Self> {
        let first = stays.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
        let (p, k, m) = (first.p_max(), first.k, first.m);
        let mut values = Vec::with_capacity(stays.len() * p * (k + m));
        let mut pad_mask = Vec::with_capacity(stays.len() * p);
        for s in stays {
            if (s.p_max(), s.k, s.m) != (p, k, m) {
                return Err(Error::Shape(format!(
                    "stay {} is {}x({}+{}), batch is {}x({}+{})",
                    s.stay_id,
                    s.p_max(),
                    s.k,
                    s.m,
                    p,
                    k,
                    m
                )));
            }
            values.extend(s.values.iter().map(|&v| T::of(v as f64)));
            pad_mask.extend_from_slice(&s.pad_mask);
        }
        Ok(Batch {
            values: Tensor::new(vec![stays.len() * p, k + m], values)?,
            pad_mask,
            labels: stays.iter().map(|s| s.label).collect(),
            b: stays.len(),
            p,
            k,
            m,
        })
    }

    pub fn from_slice(stays: &[TimeframeTensor]) -> Result<Self> {
        Self::new(&stays.iter().collect::<Vec<_>>())
    }

    pub fn l(&self) -> usize {
        self.k + self.m
    }

    /// Flat indices (into `B·P`) of real timeframes.
    pub fn real_rows(&self) -> Vec<usize> {
        (0..self.pad_mask.len()).filter(|&i| self.pad_mask[i]).collect()
    }
}

//! Transformer risk models for irregular ICU time series: tensorization, a
//! graph-attention timeframe embedder, masked pretraining, imbalance-aware
//! fine-tuning, evaluation and attribution.

pub mod cohort;
pub mod config;
pub mod error;
pub mod eval;
pub mod explain;
pub mod model;
pub mod numcore;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};

pub type Model = model::RatchetModel<f32>;
pub type Model64 = model::RatchetModel<f64>;
pub type Tensor = numcore::Tensor<f32>;
pub type Tensor64 = numcore::Tensor<f64>;

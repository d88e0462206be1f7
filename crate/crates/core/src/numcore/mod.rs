//! Dense tensors, tape-based reverse-mode differentiation and parameter storage.

mod ops;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use params::{BoundParams, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

//! The network: timeframe embedders, temporal encoder, classifier and
//! reconstruction heads.

mod batch;
mod config;
mod layers;
mod network;
mod pe;

pub use batch::Batch;
pub use config::{EmbedderKind, ModelConfig};
pub use network::{Forward, RatchetModel};
pub use pe::positional_encoding;

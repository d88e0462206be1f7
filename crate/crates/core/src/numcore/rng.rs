//! Explicit, seedable randomness. Every stochastic routine takes one of these
//! generators; nothing reads ambient entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Prng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

/// Independent generator for (`seed`, `stream`, `index`), e.g. the dropout
/// stream of step 417. Resuming at any index reproduces the same draws.
pub fn derive(seed: u64, stream: Stream, index: u64) -> Prng {
    let mut rng = Prng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) ^ index);
    rng
}

/// Named RNG streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    Init = 1,
    Split = 2,
    Sampler = 3,
    Dropout = 4,
    Masking = 5,
    Fisher = 6,
    Explain = 7,
    Synth = 8,
}

//! Seeded random streams.
//!
//! Every stochastic choice (weight init, batch shuffling, initial-condition
//! sampling) draws from a ChaCha8 stream keyed by `(seed, stream id)`, so a
//! sample's randomness does not depend on how many other samples exist or on
//! the order in which they are produced.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream namespaces. The high bits of the stream id select the purpose.
/// `Pool` feeds the training trajectories, `Test` the held-out set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Split,
    Pool,
    Test,
    Misc,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Shuffle => 2,
            Stream::Split => 3,
            Stream::Pool => 4,
            Stream::Test => 6,
            Stream::Misc => 7,
        }
    }
}

pub fn stream(seed: u64, kind: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind.tag() << 48) ^ index);
    rng
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

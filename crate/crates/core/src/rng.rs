//! Deterministic random streams.
//!
//! All randomness descends from one `u64` seed. A [`SeedTree`] is split by
//! label into independent ChaCha20 streams (a counter-based generator), so
//! each consumer owns its stream and the draw order inside one consumer is
//! the only order that matters.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Labels of the streams drawn by the training and sampling pipelines.
pub mod streams {
    pub const INIT: &str = "init";
    pub const SHUFFLE: &str = "shuffle";
    pub const DEQUANTIZE: &str = "dequantize";
    pub const SAMPLE: &str = "sample";
    pub const SPLIT: &str = "split";
    pub const GENERATOR: &str = "generator";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fork(&self, label: &str) -> SeedTree {
        SeedTree {
            seed: splitmix64(self.seed ^ splitmix64(fnv1a(label))),
        }
    }

    pub fn fork_index(&self, index: u64) -> SeedTree {
        SeedTree {
            seed: splitmix64(self.seed.wrapping_add(splitmix64(index ^ 0xA5A5_A5A5_A5A5_A5A5))),
        }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.seed)
    }

    pub fn stream(&self, label: &str) -> ChaCha20Rng {
        self.fork(label).rng()
    }
}

//! Named random substreams derived from a single master seed.
//!
//! Every consumer of randomness (gradient noise, delays, compute times, data
//! generation) pulls from its own ChaCha stream keyed by `(master, name, index)`.
//! Adding a new named stream never shifts the samples of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The concrete generator handed to every consumer.
pub type StreamRng = ChaCha8Rng;

/// Splits a master seed into independent named streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeeder {
    master: u64,
}

impl StreamSeeder {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Stream for `(name, index)`.
    pub fn stream(&self, name: &str, index: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(mix(fnv1a(name.as_bytes()), index));
        rng
    }

    /// A derived child seeder, used for sweep cells and seed replicates.
    pub fn child(&self, name: &str, index: u64) -> StreamSeeder {
        StreamSeeder::new(mix(mix(self.master, fnv1a(name.as_bytes())), index))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

// splitmix64 finalizer over the combined words
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

//! Counter-based random streams.
//!
//! Every unit of work (a round, a bootstrap resample, a coin flip for a
//! withheld party) owns a ChaCha stream selected by its index, keyed by the
//! master seed and a purpose tag. Output never depends on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Rounds = 1,
    Coins = 2,
    Bootstrap = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed, e.g. for message block `index`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x6a09_e667_f3bc_c909)))
}

#[derive(Debug, Clone)]
pub struct Streams {
    base: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose as u64)),
        }
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(index);
        rng.set_word_pos(0);
        rng
    }
}

//! Counter-keyed random streams.
//!
//! Every random draw in a run is taken from a stream identified by
//! `(master_seed, purpose, generation, index, episode)`. The key is mixed
//! into a ChaCha8 seed, so a stream's contents depend only on its key and
//! never on which thread asked for it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator type handed out for every stream.
pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Part of the key so that different consumers
/// at the same coordinates never share bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Perturbation = 1,
    Conditions = 2,
    ParentEval = 3,
    Screening = 4,
    PostEval = 5,
    Bootstrap = 6,
    Target = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    pub generation: u64,
    pub index: u64,
    pub episode: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            purpose,
            generation: 0,
            index: 0,
            episode: 0,
        }
    }

    pub fn generation(mut self, generation: u64) -> Self {
        self.generation = generation;
        self
    }

    pub fn index(mut self, index: u64) -> Self {
        self.index = index;
        self
    }

    pub fn episode(mut self, episode: u64) -> Self {
        self.episode = episode;
        self
    }

    pub fn rng(&self) -> StreamRng {
        let mut state = splitmix64(self.seed ^ 0x6a09_e667_f3bc_c908);
        for word in [
            self.purpose as u64,
            self.generation,
            self.index,
            self.episode,
        ] {
            state = splitmix64(state ^ word);
        }
        let mut seed = [0u8; 32];
        let mut s = state;
        for chunk in seed.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// SplitMix64 finalizer.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

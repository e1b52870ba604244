//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator. Streams are derived from a root seed
//! through a tree of labels:
//!
//! ```text
//! root seed
//!  ├── "data"                 synthetic data generation
//!  ├── "tune" / level l       pilot tuning runs
//!  ├── "level" / l            chain at level l of a multilevel run
//!  ├── "replicate" / r / ...  rate-study replicates
//!  └── ...
//! ```
//!
//! A child seed is `splitmix64(parent ^ splitmix64(label_hash + index))`
//! where `label_hash` is 64-bit FNV-1a over the UTF-8 label, so the tree is
//! identical on every platform. Inside a particle filter the per-particle
//! streams share one ChaCha key and are separated by the ChaCha stream id
//! (the particle index), which makes particle propagation independent of
//! scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Concrete generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// A node in the seed derivation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedNode(pub u64);

impl SeedNode {
    pub fn root(seed: u64) -> Self {
        SeedNode(seed)
    }

    pub fn child(self, label: &str, index: u64) -> Self {
        let salt = splitmix64(fnv1a(label).wrapping_add(index));
        SeedNode(splitmix64(self.0 ^ salt))
    }

    pub fn named(self, label: &str) -> Self {
        self.child(label, 0)
    }

    pub fn rng(self) -> StreamRng {
        let mut key = [0u8; 32];
        let mut s = self.0;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

/// Per-particle streams sharing one key, indexed by particle number.
#[derive(Debug, Clone)]
pub struct ParticleStreams {
    key: [u8; 32],
}

impl ParticleStreams {
    pub fn from_rng<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        ParticleStreams { key }
    }

    pub fn stream(&self, particle: usize) -> StreamRng {
        let mut r = ChaCha8Rng::from_seed(self.key);
        r.set_stream(particle as u64);
        r
    }
}

//! Seedable, splittable random streams.
//!
//! Every stochastic component draws from a ChaCha12 stream keyed by
//! `(seed, purpose tag, index)` through SHA-256, so independent pipeline
//! stages never share state and runs replay bit-exactly on any platform.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha12Rng;

/// Derives an independent RNG stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: &str, index: u64) -> Stream {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha12Rng::from_seed(key)
}

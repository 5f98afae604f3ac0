//! Deterministic stream derivation.
//!
//! Every random component of the engine draws from a ChaCha stream whose
//! key is a hash of (seed, purpose, index). Streams are therefore stable
//! across runs, platforms, thread counts, and execution order, which is
//! what makes parallel and sequential execution bit-identical.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

/// Derive an independent RNG stream from a base seed, a purpose tag and a
/// numeric index.
pub fn substream(seed: u64, purpose: &str, index: u64) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0xff]);
    hasher.update(purpose.as_bytes());
    hasher.update([0xfe]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}

/// Derive a stream keyed by an identifier string (e.g. a study id) rather
/// than an index.
pub fn substream_keyed(seed: u64, purpose: &str, key: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0xff]);
    hasher.update(purpose.as_bytes());
    hasher.update([0xfd]);
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(out)
}

//! Stable hashing and seeded randomness shared by every stage.
//!
//! All hashes are XXH64, which is defined over bytes and produces the same
//! value on every platform. Per-document generators are derived from
//! `(seed, stage tag, document id)` so decisions never depend on the order
//! in which documents are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh64::{xxh64, Xxh64};

/// Name recorded in manifests for the shard checksum.
pub const CHECKSUM_ALGORITHM: &str = "xxh64-seed0";

pub fn hash_bytes(bytes: &[u8], seed: u64) -> u64 {
    xxh64(bytes, seed)
}

pub fn hash_str(s: &str, seed: u64) -> u64 {
    xxh64(s.as_bytes(), seed)
}

/// Streaming 64-bit checksum over raw bytes.
#[derive(Clone)]
pub struct Checksum(Xxh64);

impl Checksum {
    pub fn new() -> Self {
        Checksum(Xxh64::new(0))
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.0.update(bytes);
    }

    pub fn finish(&self) -> u64 {
        self.0.digest()
    }
}

impl Default for Checksum {
    fn default() -> Self {
        Self::new()
    }
}

/// Generator private to one document within one stage.
pub fn doc_rng(seed: u64, stage: &str, doc_id: &str) -> ChaCha8Rng {
    let mut h = Xxh64::new(seed);
    h.update(stage.as_bytes());
    h.update(&[0xff]);
    h.update(doc_id.as_bytes());
    ChaCha8Rng::seed_from_u64(h.digest())
}

//! Keyed, deterministic pseudorandom function for the per-position uniform
//! vectors, plus derived utility streams (subkeys, trial seeds, null text).
//!
//! Construction: the ChaCha8 keystream is used as a counter-based keyed
//! function. The master key is the cipher key, the 64-bit stream id encodes a
//! domain tag and a seed index, and element `j` of a uniform vector is the
//! 64-bit keystream word at position `j`. Detection therefore reproduces any
//! element of any vector in O(1), bit-exactly, regardless of when or where it
//! was first drawn.
//!
//! The mapping to (0,1) keeps the top 52 bits `u` and returns
//! `(2u + 1) / 2^53`. Both numerator and quotient are exactly representable,
//! so values are uniform on a dyadic grid strictly inside the open interval:
//! never 0, never 1, and `ln(v)` / `ln(1 - v)` stay finite downstream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::types::WatermarkKey;

/// Identifies the keystream construction. Recorded in run manifests; outputs
/// from different versions are incompatible.
pub const PRF_VERSION: &str = "chacha8/1";

const OPEN_UNIT_DENOM: f64 = (1u64 << 53) as f64;

/// Domain tags keeping the crate's derived streams disjoint under one master
/// key. The uniform-vector domain is 0 so its stream id equals the bare seed
/// index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    /// Per-position uniform vectors (watermark embedding and detection).
    Uniform = 0,
    /// Green-list subset selection.
    GreenMask = 1,
    /// Fresh keys for independent Monte-Carlo trials.
    TrialKey = 2,
    /// Seeds for samplers that need free randomness.
    SamplerSeed = 3,
    /// Unwatermarked token sequences for null experiments.
    NullTokens = 4,
}

fn stream_id(domain: StreamDomain, index: u64) -> u64 {
    debug_assert!(index < 1 << 56, "stream index exceeds domain range");
    ((domain as u64) << 56) | index
}

fn keyed_rng(master: &[u8; 32], domain: StreamDomain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(*master);
    rng.set_stream(stream_id(domain, index));
    rng
}

fn u64_to_open01(h: u64) -> f64 {
    (((h >> 12) << 1) | 1) as f64 / OPEN_UNIT_DENOM
}

/// Seed class used at a 1-based sequence position under alignment offset
/// `offset`: `(position + offset) mod m`.
pub fn effective_seed(position: usize, offset: u32, modulus: u32) -> u32 {
    debug_assert!(position >= 1, "positions are 1-based");
    debug_assert!(modulus >= 1);
    ((position as u64 + offset as u64) % modulus as u64) as u32
}

/// Vector of `|V|` values strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct UniformVector {
    values: Vec<f64>,
}

impl UniformVector {
    pub(crate) fn from_values(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|&v| v > 0.0 && v < 1.0));
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl std::ops::Index<usize> for UniformVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Derives the uniform vector for one seed class. Deterministic in
/// `(key, seed_index, vocab_size)` and independent of the diffusion step;
/// extending `vocab_size` extends the vector without changing its prefix.
pub fn derive_uniforms(key: &WatermarkKey, seed_index: u32, vocab_size: usize) -> UniformVector {
    let mut rng = keyed_rng(key.master_bytes(), StreamDomain::Uniform, seed_index as u64);
    UniformVector::from_values((0..vocab_size).map(|_| u64_to_open01(rng.next_u64())).collect())
}

/// Random-access route to a single element of [`derive_uniforms`]'s output:
/// `uniform_at(key, s, j) == derive_uniforms(key, s, n)[j]` for any `n > j`.
pub fn uniform_at(key: &WatermarkKey, seed_index: u32, token: usize) -> f64 {
    let mut rng = keyed_rng(key.master_bytes(), StreamDomain::Uniform, seed_index as u64);
    rng.set_word_pos(2 * token as u128);
    u64_to_open01(rng.next_u64())
}

/// Expands a fresh 256-bit subkey from a domain-separated stream; used for
/// per-trial keys and sampler seeds.
pub fn derive_subkey(master: &[u8; 32], domain: StreamDomain, index: u64) -> [u8; 32] {
    let mut rng = keyed_rng(master, domain, index);
    let mut out = [0u8; 32];
    rng.fill_bytes(&mut out);
    out
}

/// Deterministic utility stream over one (key, domain, index) cell.
#[derive(Debug, Clone)]
pub struct KeyStream {
    rng: ChaCha8Rng,
}

impl KeyStream {
    pub fn new(master: &[u8; 32], domain: StreamDomain, index: u64) -> Self {
        Self {
            rng: keyed_rng(master, domain, index),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Unbiased draw from `[0, n)` by rejection.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n >= 1);
        let threshold = u64::MAX - u64::MAX % n;
        loop {
            let x = self.rng.next_u64();
            if x < threshold {
                return x % n;
            }
        }
    }
}

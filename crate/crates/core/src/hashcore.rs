//! Hash abstraction, threshold tests, seed derivation and seeded shuffling.
//!
//! Everything here is a pure function. The hash is SHA-256 (L = 256 bits) and
//! digests are interpreted as big-endian unsigned integers wherever an order
//! is needed.
//!
//! Shuffles are driven by SplitMix64 (Steele, Lea and Flood, 2014) seeded with
//! the 64-bit [`Seed`] value, so a permutation can be reproduced bit-exactly in
//! any language that implements SplitMix64 and the Fisher-Yates loop below.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Width of a digest in bytes.
pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HashError {
    #[error("stage index must be at least 1, got {0}")]
    InvalidStage(u64),
    #[error("flag must be 0, 1 or 2, got {0}")]
    InvalidFlag(u8),
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid hex digest: {0}")]
    InvalidHex(String),
}

/// A 256-bit hash output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest256(pub [u8; DIGEST_LEN]);

impl Digest256 {
    pub const ZERO: Digest256 = Digest256([0u8; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, HashError> {
        let bytes = hex::decode(s).map_err(|e| HashError::InvalidHex(e.to_string()))?;
        let arr: [u8; DIGEST_LEN] = bytes
            .try_into()
            .map_err(|_| HashError::InvalidHex(format!("expected {DIGEST_LEN} bytes")))?;
        Ok(Digest256(arr))
    }

    /// First eight bytes read as a big-endian integer.
    pub fn prefix_u64(&self) -> u64 {
        let mut b = [0u8; 8];
        b.copy_from_slice(&self.0[..8]);
        u64::from_be_bytes(b)
    }
}

impl fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest256({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest256 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest256 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest256::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A 64-bit random seed derived from hashes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    pub fn to_be_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }
}

/// Block-generation threshold `T_p = round(p * 2^256)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    p: f64,
    bound: Bound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bound {
    /// `T_p = 2^256`: every digest passes.
    Full,
    /// `T_p` as a 256-bit big-endian integer strictly below `2^256`.
    Below([u8; DIGEST_LEN]),
}

impl Threshold {
    pub fn new(p: f64) -> Result<Self, HashError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(HashError::InvalidProbability(p));
        }
        if p == 1.0 {
            return Ok(Threshold { p, bound: Bound::Full });
        }
        Ok(Threshold { p, bound: Bound::Below(scale_to_256(p)) })
    }

    pub fn probability(&self) -> f64 {
        self.p
    }

    /// `T_p` as 33 big-endian bytes (room for `2^256`).
    pub fn value_be(&self) -> [u8; DIGEST_LEN + 1] {
        let mut out = [0u8; DIGEST_LEN + 1];
        match self.bound {
            Bound::Full => out[0] = 1,
            Bound::Below(b) => out[1..].copy_from_slice(&b),
        }
        out
    }
}

/// Exact `round(p * 2^256)` for `0 <= p < 1`, using the binary expansion of the f64.
fn scale_to_256(p: f64) -> [u8; DIGEST_LEN] {
    let mut out = [0u8; DIGEST_LEN];
    if p == 0.0 {
        return out;
    }
    let bits = p.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    // p = mantissa * 2^exp
    let (mantissa, exp) = if exp_bits == 0 {
        (frac, -1074i64)
    } else {
        (frac | (1u64 << 52), exp_bits - 1075)
    };
    let shift = exp + 256;
    let value: u128;
    let mut offset = 0i64;
    if shift >= 0 {
        value = mantissa as u128;
        offset = shift;
    } else {
        let s = (-shift) as u32;
        if s >= 64 {
            // rounds to 0 or 1; values this small only arise from subnormal inputs
            let half = if s == 64 { mantissa >> 63 } else { 0 };
            value = half as u128;
        } else {
            let rounded = (mantissa as u128 + (1u128 << (s - 1))) >> s;
            value = rounded;
        }
    }
    // write value << offset into 256-bit big-endian buffer
    for bit in 0..128u32 {
        if (value >> bit) & 1 == 1 {
            let pos = bit as i64 + offset;
            if (0..256).contains(&pos) {
                let byte = DIGEST_LEN - 1 - (pos as usize / 8);
                out[byte] |= 1 << (pos as usize % 8);
            }
        }
    }
    out
}

/// SHA-256 of `data`.
pub fn hash(data: &[u8]) -> Digest256 {
    Digest256(Sha256::digest(data).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest256 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest256(h.finalize().into())
}

/// True iff `d`, read as a big-endian integer, is strictly below `T_p`.
pub fn meets_threshold(d: &Digest256, t: &Threshold) -> bool {
    match t.bound {
        Bound::Full => true,
        Bound::Below(b) => d.0 < b,
    }
}

/// Stage seed: first 8 bytes of `hash(block_summary || stage as u64 BE)`.
pub fn derive_seed(block_summary: &Digest256, stage: u64) -> Result<Seed, HashError> {
    if stage < 1 {
        return Err(HashError::InvalidStage(stage));
    }
    let d = hash_parts(&[block_summary.as_bytes(), &stage.to_be_bytes()]);
    Ok(Seed(d.prefix_u64()))
}

/// Flag-bound seed: first 8 bytes of `hash(base as u64 BE || flag byte)`.
pub fn derive_ctf_seed(base: Seed, flag: u8) -> Result<Seed, HashError> {
    if flag > 2 {
        return Err(HashError::InvalidFlag(flag));
    }
    let d = hash_parts(&[&base.to_be_bytes(), &[flag]]);
    Ok(Seed(d.prefix_u64()))
}

/// Sub-seed for one epoch of a stage: first 8 bytes of `hash(seed || epoch as u64 BE)`.
pub fn derive_epoch_seed(seed: Seed, epoch: u64) -> Seed {
    let d = hash_parts(&[&seed.to_be_bytes(), &epoch.to_be_bytes()]);
    Seed(d.prefix_u64())
}

/// SplitMix64 generator.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn from_seed(seed: Seed) -> Self {
        Self::new(seed.0)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform integer in `[0, bound)` by rejection sampling on the top of the range.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let rem = (u64::MAX % bound).wrapping_add(1) % bound;
        if rem == 0 {
            return self.next_u64() % bound;
        }
        let limit = 0u64.wrapping_sub(rem);
        loop {
            let x = self.next_u64();
            if x < limit {
                return x % bound;
            }
        }
    }

    /// Uniform double in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_bool(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }
}

/// Fisher-Yates permutation of `0..n` driven by SplitMix64 seeded with `seed`.
///
/// For `i` from `n-1` down to `1`, swap position `i` with `next_below(i+1)`.
pub fn shuffle(n: usize, seed: Seed) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::from_seed(seed);
    for i in (1..n).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

//! Hash-chain stand-in for a training stage.

use super::{UsefulWork, WorkError};
use crate::hashcore::{hash_parts, Digest256, Seed, DIGEST_LEN};

/// `x_0 = w_in`, `x_k = hash(x_{k-1} || seed)`; returns `x_{work_units}`.
pub fn surrogate_stage(w_in: &Digest256, seed: Seed, tau: u32, work_units: u32) -> Digest256 {
    debug_assert!(tau >= 1, "tau must be at least 1");
    let seed_bytes = seed.to_be_bytes();
    let mut x = *w_in;
    for _ in 0..work_units.max(1) {
        x = hash_parts(&[x.as_bytes(), &seed_bytes]);
    }
    x
}

#[derive(Clone, Copy, Debug)]
pub struct Surrogate {
    pub tau: u32,
    pub work_units: u32,
}

impl UsefulWork for Surrogate {
    fn compute_stage(&self, input: &[u8], seed: Seed) -> Result<Vec<u8>, WorkError> {
        let w: [u8; DIGEST_LEN] = input
            .try_into()
            .map_err(|_| WorkError::Shape(format!("surrogate input must be {DIGEST_LEN} bytes")))?;
        Ok(surrogate_stage(&Digest256(w), seed, self.tau, self.work_units).0.to_vec())
    }
}

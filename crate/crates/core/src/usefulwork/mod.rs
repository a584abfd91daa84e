//! Useful-work backends.
//!
//! Every backend maps a stage input blob and an effective seed to a stage
//! output blob. The chain commits to `hash(input)` in the block and the BGO
//! test runs on `hash(output)`, so the three backends plug into block
//! production and verification the same way:
//!
//! * [`ml`]: a small deterministic SGD trainer (input and output are weight vectors),
//! * [`surrogate`]: iterated hashing, a cheap stand-in for large simulations,
//! * [`matmul`]: block matrix multiplication with a seed-ordered accumulation trace.

pub mod matmul;
pub mod ml;
pub mod surrogate;

use thiserror::Error;

use crate::codec::DecodeError;
use crate::hashcore::Seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkError {
    #[error("training diverged: non-finite weight at epoch {epoch}")]
    Diverged { epoch: u64 },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed stage input: {0}")]
    Decode(#[from] DecodeError),
}

/// A stage of useful work that can be (re)computed from its input and seed.
pub trait UsefulWork {
    fn compute_stage(&self, input: &[u8], seed: Seed) -> Result<Vec<u8>, WorkError>;
}

impl<T: UsefulWork + ?Sized> UsefulWork for &T {
    fn compute_stage(&self, input: &[u8], seed: Seed) -> Result<Vec<u8>, WorkError> {
        (**self).compute_stage(input, seed)
    }
}

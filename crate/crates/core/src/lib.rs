//! Proof-of-learning blockchain protocol and a stage-synchronous simulator.
//!
//! Miners earn block generation opportunities by training stages of assigned
//! machine-learning tasks; committees of verifiers spot-check the stages and
//! settle rewards. [`sim`] runs the whole protocol for many miners.

pub mod chain;
pub mod codec;
pub mod hashcore;
pub mod incentives;
pub mod ledger;
pub mod proofs;
pub mod roles;
pub mod sim;
pub mod usefulwork;

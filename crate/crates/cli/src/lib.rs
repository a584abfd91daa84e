//! Experiment runner: loads TOML experiment specs, runs protocol checks and
//! simulation sweeps, and writes CSV artifacts with a measured-vs-expected summary.

pub mod checks;
pub mod config;
pub mod report;
pub mod sims;

use polchain_core::chain::ChainError;
use polchain_core::hashcore::HashError;
use polchain_core::incentives::IncentiveError;
use polchain_core::proofs::ProofError;
use polchain_core::sim::ConfigErrors;
use polchain_core::usefulwork::WorkError;
use thiserror::Error;

pub use config::{validate_config, ExperimentSpec, Mode};
pub use report::{write_report, Check, Report};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error(transparent)]
    Proof(#[from] ProofError),
    #[error(transparent)]
    Work(#[from] WorkError),
    #[error(transparent)]
    Incentive(#[from] IncentiveError),
}

/// Run one experiment; the artifacts are deterministic for a fixed spec.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Report, RunError> {
    spec.validate().map_err(ConfigErrors)?;
    match spec.mode {
        Mode::ProtocolCheck => checks::protocol_check(spec),
        Mode::Figure1 => sims::figure1(spec),
        Mode::Figure2Sweep => sims::figure2(spec),
        Mode::Figure3Sweep => sims::figure3(spec),
        Mode::IncentiveTable => checks::incentive_table(spec),
        Mode::MatmulDemo => checks::matmul_demo(spec),
        Mode::PrivateFork => sims::private_fork(spec),
    }
}

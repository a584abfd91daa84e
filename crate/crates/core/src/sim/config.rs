use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Latencies {
    pub dataset_download: u32,
    pub weight_transfer: u32,
    pub committee_block_verify: u32,
    pub network_block_verify: u32,
    pub verify_stage_cost: u32,
}

impl Default for Latencies {
    fn default() -> Self {
        Latencies {
            dataset_download: 2,
            weight_transfer: 1,
            committee_block_verify: 2,
            network_block_verify: 4,
            verify_stage_cost: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Trains only a `rho` fraction of each task's stages; the rest are skipped at no cost.
    Dishonest,
    /// Trains honestly but mines on a private branch that the rest of the network never sees.
    PrivateFork,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adversary {
    pub fraction: f64,
    #[serde(default = "one")]
    pub rho: f64,
    pub strategy: Strategy,
    /// Fraction of a stage's time a skipped stage still costs (0 = skipping is free).
    #[serde(default)]
    pub skip_cost: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BgoMode {
    /// A binomial coin toss over the miners that completed a stage.
    CoinToss,
    /// Real templates, seeds and iterated-hash stages checked against the threshold.
    Hash,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub g: usize,
    pub g_v: usize,
    pub p: f64,
    pub mean_epochs: u32,
    /// Task length is drawn uniformly from `[(1 - jitter) E, (1 + jitter) E]`.
    pub jitter: f64,
    pub tau: u32,
    pub alpha: u32,
    pub gamma: f64,
    pub xi: f64,
    pub ctf: bool,
    pub latency: Latencies,
    pub adversary: Option<Adversary>,
    pub seed: u64,
    /// Total simulated stages, warmup included.
    pub horizon: u64,
    pub warmup: u64,
    /// Verifiers waiting for proofs keep training redundantly (and keep their BGO tosses).
    pub verifier_redundant: bool,
    pub bgo_mode: BgoMode,
    pub block_reward: u64,
    pub deposit: u64,
    pub refund_window: u64,
    pub verifier_timeout: u64,
    /// Record role populations every this many stages (0 disables the series).
    pub series_every: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 1000,
            g: 25,
            g_v: 5,
            p: 1e-4,
            mean_epochs: 4000,
            jitter: 0.1,
            tau: 4,
            alpha: 10,
            gamma: 0.0,
            xi: 0.2,
            ctf: false,
            latency: Latencies::default(),
            adversary: None,
            seed: 1,
            horizon: 250_000,
            warmup: 50_000,
            verifier_redundant: false,
            bgo_mode: BgoMode::CoinToss,
            block_reward: 10,
            deposit: crate::roles::DEFAULT_DEPOSIT,
            refund_window: crate::roles::DEFAULT_REFUND_WINDOW,
            verifier_timeout: crate::proofs::DEFAULT_VERIFIER_TIMEOUT,
            series_every: 100,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{field}: {message}")]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ConfigErrors(pub Vec<FieldError>);

impl SimConfig {
    /// Smallest and largest task length in stages.
    pub fn stage_range(&self) -> (u32, u32) {
        let lo = ((1.0 - self.jitter) * f64::from(self.mean_epochs) / f64::from(self.tau)).ceil() as u32;
        let hi = ((1.0 + self.jitter) * f64::from(self.mean_epochs) / f64::from(self.tau)).floor() as u32;
        (lo.max(1), hi.max(lo.max(1)))
    }

    /// Check every invariant and collect all violations.
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: &str| errs.push(FieldError { field: field.into(), message: message.into() });
        if self.n == 0 {
            bad("n", "must be positive");
        }
        if self.g == 0 {
            bad("g", "must be positive");
        }
        if self.g_v == 0 || self.g_v >= self.g {
            bad("g_v", "must satisfy 0 < g_v < g");
        }
        if !(0.0..=1.0).contains(&self.p) || self.p == 0.0 {
            bad("p", "must lie in (0, 1]");
        }
        if self.tau == 0 {
            bad("tau", "must be positive");
        }
        if self.mean_epochs == 0 || (self.tau > 0 && self.mean_epochs < self.tau) {
            bad("mean_epochs", "must be at least tau");
        }
        if !(0.0..1.0).contains(&self.jitter) {
            bad("jitter", "must lie in [0, 1)");
        }
        if self.alpha == 0 {
            bad("alpha", "must be positive");
        } else if self.tau > 0 && self.mean_epochs >= self.tau {
            let (lo, _) = self.stage_range();
            if self.alpha >= lo {
                bad("alpha", "must be smaller than the shortest task");
            }
        }
        if !(self.gamma >= 0.0) {
            bad("gamma", "must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.xi) {
            bad("xi", "must lie in [0, 1]");
        }
        if self.horizon == 0 || self.warmup >= self.horizon {
            bad("warmup", "must be smaller than horizon");
        }
        if self.deposit == 0 {
            bad("deposit", "must be positive");
        }
        if self.verifier_timeout == 0 {
            bad("verifier_timeout", "must be positive");
        }
        let l = &self.latency;
        if l.committee_block_verify == 0 || l.network_block_verify == 0 || l.verify_stage_cost == 0 {
            bad("latency", "block verification and stage verification latencies must be positive");
        }
        if let Some(a) = &self.adversary {
            if !(a.fraction > 0.0 && a.fraction < 1.0) {
                bad("adversary.fraction", "must lie in (0, 1)");
            }
            if !(0.0..=1.0).contains(&a.rho) {
                bad("adversary.rho", "must lie in [0, 1]");
            }
            if !(0.0..=1.0).contains(&a.skip_cost) {
                bad("adversary.skip_cost", "must lie in [0, 1]");
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errs))
        }
    }
}

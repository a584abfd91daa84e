use std::path::PathBuf;

use clap::ValueEnum;
use polchain_core::sim::{FieldError, SimConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Tamper evidence, height binding, CTF detection, commitment forgery, conservation, cheating Monte Carlo.
    ProtocolCheck,
    /// Role populations over time and block statistics at the default parameters.
    Figure1,
    /// UBGR, UWR and fork rate over a grid of block probabilities.
    Figure2Sweep,
    /// Reward rate against the honest training ratio for several (alpha, gamma).
    Figure3Sweep,
    /// Sufficient gamma, monotonicity certificates and the honesty conditions.
    IncentiveTable,
    /// Masked matrix-multiplication backend on random integer cases.
    MatmulDemo,
    /// A 30% coalition mining a private branch against the honest network.
    PrivateFork,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::ProtocolCheck => "protocol-check",
            Mode::Figure1 => "figure1",
            Mode::Figure2Sweep => "figure2-sweep",
            Mode::Figure3Sweep => "figure3-sweep",
            Mode::IncentiveTable => "incentive-table",
            Mode::MatmulDemo => "matmul-demo",
            Mode::PrivateFork => "private-fork",
        }
    }

    /// Modes whose `[sim]` table must state `p` explicitly.
    fn needs_p(self) -> bool {
        matches!(self, Mode::Figure1 | Mode::Figure3Sweep | Mode::PrivateFork)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Combo {
    pub alpha: u32,
    pub gamma: f64,
}

/// Mode-specific knobs outside the simulator configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    /// Block probabilities for `figure2-sweep`.
    pub p_grid: Vec<f64>,
    /// Honest training ratios for `figure3-sweep`.
    pub rho_grid: Vec<f64>,
    pub combos: Vec<Combo>,
    /// Share of miners following the dishonest strategy in `figure3-sweep`.
    pub strategic_fraction: f64,
    /// Share of miners in the private-fork coalition.
    pub fork_fraction: f64,
    /// Trials per point for the statistical protocol checks.
    pub trials: u64,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            p_grid: vec![1e-5, 2.5e-5, 5e-5, 1e-4, 2.5e-4, 5e-4],
            rho_grid: (0..=10).map(|i| f64::from(i) / 10.0).collect(),
            combos: vec![Combo { alpha: 1, gamma: 0.0 }, Combo { alpha: 1, gamma: 0.05 }, Combo { alpha: 10, gamma: 0.0 }],
            strategic_fraction: 0.05,
            fork_fraction: 0.3,
            trials: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub mode: Mode,
    pub replicas: usize,
    /// Not part of the reproducibility header: the same run may land in different directories.
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub sim: SimConfig,
    pub sweep: Sweep,
}

impl ExperimentSpec {
    /// Defaults for a mode, used when no config file is given and as the base under one.
    pub fn defaults(mode: Mode) -> Self {
        let mut sim = SimConfig::default();
        let replicas = match mode {
            Mode::Figure1 => {
                sim.series_every = 10;
                5
            }
            Mode::Figure2Sweep => {
                sim.series_every = 0;
                3
            }
            Mode::Figure3Sweep => {
                sim.series_every = 0;
                sim.ctf = true;
                sim.horizon = 150_000;
                sim.warmup = 30_000;
                1
            }
            Mode::PrivateFork => {
                sim.series_every = 0;
                sim.horizon = 100_000;
                sim.warmup = 1_000;
                100
            }
            _ => 1,
        };
        ExperimentSpec { name: mode.name().into(), mode, replicas, out: None, sim, sweep: Sweep::default() }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out").join(&self.name))
    }

    /// Every invariant of the experiment and its simulator configuration.
    pub fn validate(&self) -> Result<(), Vec<FieldError>> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: &str| errs.push(FieldError { field: field.into(), message: message.into() });
        if self.replicas == 0 {
            bad("replicas", "must be at least 1");
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            bad("name", "must be a non-empty plain directory name");
        }
        let s = &self.sweep;
        match self.mode {
            Mode::Figure2Sweep => {
                if s.p_grid.is_empty() || s.p_grid.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
                    bad("sweep.p_grid", "must be a non-empty list of probabilities in (0, 1]");
                }
                if s.p_grid.windows(2).any(|w| w[0] >= w[1]) {
                    bad("sweep.p_grid", "must be strictly increasing");
                }
            }
            Mode::Figure3Sweep => {
                if s.rho_grid.is_empty() || s.rho_grid.iter().any(|r| !(0.0..=1.0).contains(r)) {
                    bad("sweep.rho_grid", "must be a non-empty list of ratios in [0, 1]");
                }
                if s.rho_grid.windows(2).any(|w| w[0] >= w[1]) {
                    bad("sweep.rho_grid", "must be strictly increasing");
                }
                if s.combos.is_empty() || s.combos.iter().any(|c| c.alpha == 0 || !(c.gamma >= 0.0)) {
                    bad("sweep.combos", "needs at least one entry with alpha >= 1 and gamma >= 0");
                }
                if !(s.strategic_fraction > 0.0 && s.strategic_fraction < 1.0) {
                    bad("sweep.strategic_fraction", "must lie in (0, 1)");
                }
            }
            Mode::PrivateFork => {
                if !(s.fork_fraction > 0.0 && s.fork_fraction < 1.0) {
                    bad("sweep.fork_fraction", "must lie in (0, 1)");
                }
            }
            Mode::ProtocolCheck => {
                if s.trials == 0 {
                    bad("sweep.trials", "must be positive");
                }
            }
            _ => {}
        }
        if let Err(e) = self.sim.validate() {
            errs.extend(e.0.into_iter().map(|f| FieldError { field: format!("sim.{}", f.field), message: f.message }));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// The resolved spec as TOML, echoed into every artifact.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

/// Parse a TOML experiment file over the mode defaults and check every invariant.
///
/// Errors are collected rather than returned at the first problem; each names its field.
pub fn validate_config(raw: &str) -> Result<ExperimentSpec, Vec<FieldError>> {
    let err = |field: &str, message: String| FieldError { field: field.into(), message };
    let table: toml::Table = raw.parse().map_err(|e: toml::de::Error| vec![err("toml", e.message().to_string())])?;
    let mut errs = Vec::new();
    for key in table.keys() {
        if !["name", "mode", "replicas", "sim", "sweep"].contains(&key.as_str()) {
            errs.push(err(key, "unknown field".into()));
        }
    }
    let mode = match table.get("mode") {
        None => {
            errs.push(err("mode", "missing".into()));
            None
        }
        Some(v) => match v.clone().try_into::<Mode>() {
            Ok(m) => Some(m),
            Err(e) => {
                errs.push(err("mode", e.message().to_string()));
                None
            }
        },
    };
    let Some(mode) = mode else { return Err(errs) };
    let mut spec = ExperimentSpec::defaults(mode);

    match table.get("name").map(|v| v.as_str()) {
        None => {}
        Some(Some(s)) => spec.name = s.to_string(),
        Some(None) => errs.push(err("name", "must be a string".into())),
    }
    match table.get("replicas").map(|v| v.as_integer()) {
        None => {}
        Some(Some(r)) if r >= 0 => spec.replicas = r as usize,
        Some(_) => errs.push(err("replicas", "must be a non-negative integer".into())),
    }

    let user_sim = match table.get("sim") {
        None => toml::Table::new(),
        Some(toml::Value::Table(t)) => t.clone(),
        Some(_) => {
            errs.push(err("sim", "must be a table".into()));
            toml::Table::new()
        }
    };
    if mode.needs_p() && !user_sim.contains_key("p") {
        errs.push(err("p", "missing from [sim]; the block probability must be stated explicitly".into()));
    }
    match overlay(&spec.sim, user_sim) {
        Ok(sim) => spec.sim = sim,
        Err(e) => errs.push(err("sim", e.message().to_string())),
    }
    if let Some(v) = table.get("sweep") {
        match overlay(&spec.sweep, v.as_table().cloned().unwrap_or_default()) {
            Ok(s) => spec.sweep = s,
            Err(e) => errs.push(err("sweep", e.message().to_string())),
        }
    }

    if let Err(e) = spec.validate() {
        errs.extend(e);
    }
    if errs.is_empty() {
        Ok(spec)
    } else {
        Err(errs)
    }
}

/// Merge `user` over the serialized `base`, recursing into nested tables, and deserialize the result.
fn overlay<T: Serialize + serde::de::DeserializeOwned>(base: &T, user: toml::Table) -> Result<T, toml::de::Error> {
    fn merge(into: &mut toml::Table, from: toml::Table) {
        for (k, v) in from {
            match (into.get_mut(&k), v) {
                (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
                (_, v) => {
                    into.insert(k, v);
                }
            }
        }
    }
    let mut t = toml::Table::try_from(base).expect("defaults serialize");
    merge(&mut t, user);
    toml::Value::Table(t).try_into()
}

//! Closed-form incentive analysis for a prover that trains only a fraction `rho` of its stages.
//!
//! With pass probability `q(rho)`:
//!
//! ```text
//! u(rho)  = q (R_t + rho R_b - rho C) + (1 - q) (-gamma R_t - rho C)
//! nu(rho) = u(rho) / (rho t_M)
//! ```
//!
//! and the worst case `q(rho) <= k(rho) = (1 - kappa + kappa rho)^alpha`.
//! Honest training is incentivized when `u(1) > 0`, `u(0) <= 0` and
//! `nu(rho) < nu(1)` for every `rho` in `(0, 1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of interior grid points used to certify the rate condition.
pub const GRID_POINTS: usize = 999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IncentiveError {
    #[error("rho must lie in [0, 1], got {0}")]
    Rho(f64),
    #[error("kappa must lie in (0, 1], got {0}")]
    Kappa(f64),
    #[error("payoff rate is undefined at rho = 0")]
    UndefinedRate,
    #[error("{0} must be non-negative")]
    Negative(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncentiveParams {
    pub r_t: f64,
    pub r_b: f64,
    pub c: f64,
    pub t_m: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub alpha: u32,
}

impl IncentiveParams {
    /// R_t = 1000, R_b = 200, C = 800, kappa = 1/2, alpha = 5, gamma = 0.05.
    pub fn reference() -> Self {
        IncentiveParams { r_t: 1000.0, r_b: 200.0, c: 800.0, t_m: 1000.0, gamma: 0.05, kappa: 0.5, alpha: 5 }
    }

    pub fn validate(&self) -> Result<(), IncentiveError> {
        for (v, name) in [(self.r_t, "R_t"), (self.r_b, "R_b"), (self.c, "C"), (self.t_m, "t_M"), (self.gamma, "gamma")] {
            if !(v >= 0.0) {
                return Err(IncentiveError::Negative(name));
            }
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(IncentiveError::Kappa(self.kappa));
        }
        Ok(())
    }

    /// `q(rho)` under the worst-case bound.
    pub fn k(&self, rho: f64) -> f64 {
        (1.0 - self.kappa + self.kappa * rho).powi(self.alpha as i32)
    }
}

/// `k(rho) = (1 - kappa + kappa rho)^alpha`.
pub fn q_upper_bound(rho: f64, kappa: f64, alpha: u32) -> Result<f64, IncentiveError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(IncentiveError::Rho(rho));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(IncentiveError::Kappa(kappa));
    }
    Ok((1.0 - kappa + kappa * rho).powi(alpha as i32))
}

/// Expected payoff of one task at honest ratio `rho` and pass probability `q`.
pub fn payoff(p: &IncentiveParams, rho: f64, q: f64) -> f64 {
    q * (p.r_t + rho * p.r_b - rho * p.c) + (1.0 - q) * (-p.gamma * p.r_t - rho * p.c)
}

/// Payoff per unit of training time.
pub fn payoff_rate(p: &IncentiveParams, rho: f64, q: f64) -> Result<f64, IncentiveError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(if rho == 0.0 { IncentiveError::UndefinedRate } else { IncentiveError::Rho(rho) });
    }
    Ok(payoff(p, rho, q) / (rho * p.t_m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// `u(1) > 0`
    HonestProfitable,
    /// `u(0) <= 0`
    FullCheatUnprofitable,
    /// `nu(rho) < nu(1)` on `(0, 1)`
    HonestRateDominates,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HonestCheck {
    pub holds: bool,
    pub violated: Option<(Condition, f64)>,
}

/// Evaluate the three honesty conditions under `q`, reporting the first violation and its witness `rho`.
pub fn check_honest_conditions(p: &IncentiveParams, q: impl Fn(f64) -> f64) -> HonestCheck {
    let fail = |c, rho| HonestCheck { holds: false, violated: Some((c, rho)) };
    let u1 = payoff(p, 1.0, q(1.0));
    if !(u1 > 0.0) {
        return fail(Condition::HonestProfitable, 1.0);
    }
    if payoff(p, 0.0, q(0.0)) > 0.0 {
        return fail(Condition::FullCheatUnprofitable, 0.0);
    }
    // nu(rho) < nu(1)  <=>  u(rho) < rho u(1)  for rho > 0.
    for i in 1..=GRID_POINTS {
        let rho = i as f64 / (GRID_POINTS + 1) as f64;
        if payoff(p, rho, q(rho)) >= rho * u1 {
            return fail(Condition::HonestRateDominates, rho);
        }
    }
    HonestCheck { holds: true, violated: None }
}

/// Worst-case check using `q = k`.
pub fn check_honest_worst_case(p: &IncentiveParams) -> HonestCheck {
    check_honest_conditions(p, |rho| p.k(rho))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaBound {
    pub value: f64,
    /// The bound is only proven sufficient for `alpha >= 2`.
    pub hypothesis_met: bool,
}

/// `gamma >= (1 - kappa)^alpha / (1 - (1 - kappa)^alpha)`.
pub fn gamma_sufficient(kappa: f64, alpha: u32) -> Result<GammaBound, IncentiveError> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(IncentiveError::Kappa(kappa));
    }
    let x = (1.0 - kappa).powi(alpha as i32);
    Ok(GammaBound { value: x / (1.0 - x), hypothesis_met: alpha >= 2 })
}

/// `f(rho) = (k(rho) - rho) / (1 - k(rho))`, defined on `[0, 1)`.
pub fn f_rho(rho: f64, kappa: f64, alpha: u32) -> f64 {
    let k = (1.0 - kappa + kappa * rho).powi(alpha as i32);
    (k - rho) / (1.0 - k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityCertificate {
    pub kappa: f64,
    pub alpha: u32,
    pub f0: f64,
    /// Largest step-to-step increase seen on the grid (<= 0 means non-increasing).
    pub max_increase: f64,
    pub non_increasing: bool,
    /// `f(0)` dominates every grid value.
    pub sup_at_zero: bool,
    pub f_near_one: f64,
}

/// Evaluate `f` at `rho = 0` and on the interior grid and check it never increases.
pub fn monotonicity_certificate(kappa: f64, alpha: u32) -> MonotonicityCertificate {
    let f0 = f_rho(0.0, kappa, alpha);
    let mut prev = f0;
    let mut max_increase = f64::NEG_INFINITY;
    let mut sup = f0;
    for i in 1..=GRID_POINTS {
        let v = f_rho(i as f64 / (GRID_POINTS + 1) as f64, kappa, alpha);
        max_increase = max_increase.max(v - prev);
        sup = sup.max(v);
        prev = v;
    }
    // Round-off allowance: differences are computed from values of order 1.
    let tol = 1e-12 * (1.0 + f0.abs());
    MonotonicityCertificate {
        kappa,
        alpha,
        f0,
        max_increase,
        non_increasing: max_increase <= tol,
        sup_at_zero: sup <= f0 + tol,
        f_near_one: prev,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffRow {
    pub rho: f64,
    pub k: f64,
    pub u: f64,
    pub nu: Option<f64>,
}

/// `(rho, k, u, nu)` at `rho = i / points` for `i = 0..=points`.
pub fn payoff_table(p: &IncentiveParams, points: usize) -> Vec<PayoffRow> {
    (0..=points)
        .map(|i| {
            let rho = i as f64 / points as f64;
            let k = p.k(rho);
            PayoffRow { rho, k, u: payoff(p, rho, k), nu: payoff_rate(p, rho, k).ok() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_endpoints() {
        assert_eq!(q_upper_bound(1.0, 0.5, 7).unwrap(), 1.0);
        assert_eq!(q_upper_bound(0.0, 1.0, 3).unwrap(), 0.0);
        assert_eq!(q_upper_bound(0.0, 0.5, 10).unwrap(), 1.0 / 1024.0);
        assert!(q_upper_bound(1.5, 0.5, 1).is_err());
        assert!(q_upper_bound(0.5, 0.0, 1).is_err());
    }

    #[test]
    fn payoff_substitutions() {
        let p = IncentiveParams::reference();
        assert_eq!(payoff(&p, 1.0, 1.0), p.r_t + p.r_b - p.c);
        let q0 = 0.1;
        assert!((payoff(&p, 0.0, q0) - (q0 * p.r_t - (1.0 - q0) * p.gamma * p.r_t)).abs() < 1e-12);
        assert_eq!(payoff_rate(&p, 0.0, 0.0), Err(IncentiveError::UndefinedRate));
    }

    #[test]
    fn reference_rates_dominated_by_honest() {
        let p = IncentiveParams::reference();
        let nu1 = payoff_rate(&p, 1.0, 1.0).unwrap();
        for i in 1..100 {
            let rho = i as f64 / 100.0;
            assert!(payoff_rate(&p, rho, p.k(rho)).unwrap() < nu1, "rho {rho}");
        }
        assert!(check_honest_worst_case(&p).holds);
    }

    #[test]
    fn violations_are_named() {
        let mut p = IncentiveParams::reference();
        p.c = 2000.0;
        assert_eq!(check_honest_worst_case(&p).violated.unwrap().0, Condition::HonestProfitable);
        let mut p = IncentiveParams::reference();
        p.gamma = 0.01;
        assert_eq!(check_honest_worst_case(&p).violated.unwrap().0, Condition::FullCheatUnprofitable);
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma_sufficient(1.0, 3).unwrap().value, 0.0);
        assert_eq!(gamma_sufficient(0.5, 5).unwrap().value, 1.0 / 31.0);
        assert_eq!(gamma_sufficient(0.5, 10).unwrap().value, 1.0 / 1023.0);
        assert!(!gamma_sufficient(0.5, 1).unwrap().hypothesis_met);
    }

    #[test]
    fn certificate_examples() {
        let c = monotonicity_certificate(0.5, 2);
        assert!((c.f0 - 1.0 / 3.0).abs() < 1e-15);
        assert!(c.non_increasing && c.sup_at_zero);
        let c = monotonicity_certificate(1.0, 4);
        assert_eq!(c.f0, 0.0);
        assert!(c.non_increasing);
    }
}

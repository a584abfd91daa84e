use polchain_core::incentives::{
    check_honest_conditions, check_honest_worst_case, gamma_sufficient, monotonicity_certificate, payoff, payoff_table,
    Condition, IncentiveParams,
};
use proptest::prelude::*;

#[test]
fn gamma_bound_at_half_is_exact() {
    for alpha in 2..=12u32 {
        let b = gamma_sufficient(0.5, alpha).unwrap();
        assert_eq!(b.value, 1.0 / (2f64.powi(alpha as i32) - 1.0), "alpha {alpha}");
        assert!(b.hypothesis_met);
    }
}

#[test]
fn certificates_hold_on_the_whole_grid() {
    for kappa in [0.5, 1.0] {
        for alpha in 2..=10 {
            let c = monotonicity_certificate(kappa, alpha);
            assert!(c.non_increasing && c.sup_at_zero, "kappa {kappa} alpha {alpha}: {c:?}");
        }
    }
}

#[test]
fn sufficient_gamma_makes_honesty_dominant() {
    for alpha in 2..=10u32 {
        let g = gamma_sufficient(0.5, alpha).unwrap().value;
        let p = IncentiveParams { gamma: g * 1.01, alpha, ..IncentiveParams::reference() };
        assert!(check_honest_worst_case(&p).holds, "alpha {alpha}");
        let p = IncentiveParams { gamma: g * 0.9, alpha, ..IncentiveParams::reference() };
        assert_eq!(check_honest_worst_case(&p).violated.map(|v| v.0), Some(Condition::FullCheatUnprofitable));
    }
}

#[test]
fn table_rows_cover_the_endpoints() {
    let p = IncentiveParams::reference();
    let t = payoff_table(&p, 10);
    assert_eq!(t.len(), 11);
    assert!(t[0].nu.is_none());
    assert_eq!(t[10].k, 1.0);
    assert_eq!(t[10].u, p.r_t + p.r_b - p.c);
}

proptest! {
    #[test]
    fn certain_detection_never_pays(alpha in 1u32..12, gamma in 0.0f64..1.0, rho in 0.0f64..1.0) {
        // With q = 0 below rho = 1 the cheat only pays the penalty and its own training cost.
        let p = IncentiveParams { alpha, gamma, ..IncentiveParams::reference() };
        prop_assert!(payoff(&p, rho, 0.0) <= 0.0);
        let check = check_honest_conditions(&p, |r| if r == 1.0 { 1.0 } else { 0.0 });
        prop_assert!(check.holds);
    }
}

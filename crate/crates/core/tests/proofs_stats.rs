use std::collections::BTreeSet;

use polchain_core::hashcore::{hash, Digest256, Seed, SplitMix64};
use polchain_core::incentives::q_upper_bound;
use polchain_core::proofs::{
    capture_flag, cheating_pass_rate, finalize_task, flag_commitment, sample_flags, select_stages, verifier_pass, Account,
    Bank, FailReason, TableOracle, TaskTerms, VerificationContract,
};
use proptest::prelude::*;

#[test]
fn flag_frequencies_match_xi() {
    let n = 200_000u32;
    let xi = 0.2;
    let f = sample_flags(n, xi, Seed(99)).unwrap();
    let mut counts = [0f64; 3];
    for &x in &f.flags {
        counts[x as usize] += 1.0;
    }
    for (k, p) in [(0usize, 1.0 - xi), (1, xi / 2.0), (2, xi / 2.0)] {
        let sd = (p * (1.0 - p) / f64::from(n)).sqrt();
        let got = counts[k] / f64::from(n);
        assert!((got - p).abs() < 4.0 * sd, "flag {k}: {got} vs {p}");
    }
}

#[test]
fn stage_selection_is_uniform() {
    let stages = 20u32;
    let mut rng = SplitMix64::new(5);
    let mut counts = vec![0f64; stages as usize];
    let draws = 40_000;
    let excluded: BTreeSet<u32> = [3, 11].into_iter().collect();
    for _ in 0..draws {
        for s in select_stages(stages, 3, &excluded, &mut rng).unwrap() {
            counts[s as usize - 1] += 1.0;
        }
    }
    assert_eq!(counts[2], 0.0);
    assert_eq!(counts[10], 0.0);
    let expect = f64::from(draws * 3) / 18.0;
    let chi2: f64 = counts.iter().enumerate().filter(|(i, _)| *i != 2 && *i != 10).map(|(_, c)| (c - expect).powi(2) / expect).sum();
    // chi-square, 17 degrees of freedom, 0.1% critical value.
    assert!(chi2 < 40.79, "chi2 {chi2}");
    // Dense path (alpha close to the eligible count) must also respect exclusions.
    let all = select_stages(stages, 18, &excluded, &mut rng).unwrap();
    assert_eq!(all.len(), 18);
    assert!(!all.contains(&3) && !all.contains(&11));
    assert!(select_stages(stages, 19, &excluded, &mut rng).is_err());
}

#[test]
fn ctf_catches_skipped_stages_half_the_time() {
    let trials = 100_000u32;
    let mut rng = SplitMix64::new(17);
    let mut caught = 0u32;
    for _ in 0..trials {
        let claimed = if rng.next_bool() { 1 } else { 2 };
        let oracle = TableOracle { honest: vec![false], flags: Some(vec![claimed]) };
        let r = capture_flag(&oracle, 1, &mut rng).unwrap();
        assert!(!r.confirmed);
        if r.flag != Some(claimed) {
            caught += 1;
        }
    }
    let rate = f64::from(caught) / f64::from(trials);
    let se = (0.25 / f64::from(trials)).sqrt();
    assert!((rate - 0.5).abs() <= 3.0 * se, "detection rate {rate}");
}

#[test]
fn honest_stages_are_always_confirmed() {
    let mut rng = SplitMix64::new(3);
    for flag in 0..3u8 {
        let oracle = TableOracle { honest: vec![true], flags: Some(vec![flag]) };
        for _ in 0..100 {
            let r = capture_flag(&oracle, 1, &mut rng).unwrap();
            assert_eq!(r.flag, Some(flag));
            assert!(r.confirmed || r.recomputations == 2);
        }
    }
}

#[test]
fn cheating_pass_rate_respects_the_bound() {
    let mut rng = SplitMix64::new(41);
    for (ctf, kappa) in [(true, 0.5), (false, 1.0)] {
        for alpha in [2usize, 5] {
            for rho in [0.3, 0.8] {
                let (rate, se) = cheating_pass_rate(100, rho, alpha, ctf, 20_000, &mut rng).unwrap();
                let k = q_upper_bound(rho, kappa, alpha as u32).unwrap();
                assert!(rate <= k + 3.0 * se.max(1e-9), "ctf {ctf} alpha {alpha} rho {rho}: {rate} > {k}");
            }
        }
    }
}

fn terms(i: u64, reward: u64, gamma: f64) -> TaskTerms {
    TaskTerms {
        task_id: hash(&i.to_be_bytes()),
        requester: 1,
        prover_sd: hash(&[b'd', i as u8, (i >> 8) as u8]),
        reward,
        verify_reward: 3,
        flag_reward: 1,
        verifiers: 3,
        alpha: 2,
        gamma,
    }
}

#[test]
fn credits_are_conserved_across_many_settlements() {
    let mut rng = SplitMix64::new(8);
    let mut bank = Bank::new();
    for i in 0..10_000u64 {
        let t = terms(i, 100 + rng.next_below(1000), rng.next_f64() * 0.2);
        bank.mint(Account::Requester(1), t.escrow());
        bank.fund_task(&t).unwrap();
        bank.mint(Account::Miner(7), 100);
        bank.transfer(Account::Miner(7), Account::Deposit(t.prover_sd), 100).unwrap();
        for _ in 0..rng.next_below(3) {
            bank.mint(Account::BlockPool, 10);
            bank.withhold_block_reward(t.task_id, 10).unwrap();
        }
        let reporting: Vec<u64> = (0..3).filter(|_| rng.next_below(5) > 0).map(|v| 100 + v).collect();
        let flag_captures = reporting.iter().map(|v| (*v, rng.next_below(3) as u32)).collect();
        let c = VerificationContract {
            task_id: t.task_id,
            prover: 7,
            passed: rng.next_bool(),
            reason: None,
            reporting,
            flag_captures,
            confirmations: 0,
        };
        let s = bank.settle(&c, &t).unwrap();
        assert!(bank.conserved());
        assert_eq!(bank.balance(&Account::Escrow(t.task_id)), 0);
        assert_eq!(bank.balance(&Account::Withheld(t.task_id)), 0);
        assert_eq!(s.verifier_credit + if c.passed { t.reward } else { 0 } + s.refunded, t.escrow());
    }
    assert_eq!(bank.total(), bank.minted());
}

#[test]
fn scripted_failed_task_moves_the_right_credits() {
    let mut bank = Bank::new();
    let t = terms(1, 1000, 0.05);
    bank.mint(Account::Requester(1), t.escrow());
    bank.fund_task(&t).unwrap();
    bank.mint(Account::Deposit(t.prover_sd), 100);
    bank.mint(Account::BlockPool, 10);
    bank.withhold_block_reward(t.task_id, 10).unwrap();

    // Stage 4 was skipped and claims flag 2; the verifier guesses right and reports flag 1.
    let mut flags = vec![0u8; 10];
    flags[3] = 2;
    let mut honest = vec![true; 10];
    honest[3] = false;
    let oracle = TableOracle { honest, flags: Some(flags.clone()) };
    let mut found = None;
    for seed in 0..64 {
        let mut rng = SplitMix64::new(seed);
        let r = verifier_pass(&oracle, 100, 10, 9, &BTreeSet::new(), true, &mut rng).unwrap();
        if r.checks.iter().any(|c| c.stage == 4 && c.flag == Some(1)) {
            found = Some(r);
            break;
        }
    }
    let report = found.expect("some seed catches stage 4");
    let c = finalize_task(t.task_id, 7, &[Some(report)], Some((Some(&flags), flag_commitment(&flags))), &oracle).unwrap();
    assert!(!c.passed);
    assert_eq!(c.reason, Some(FailReason::BadStage(4)));
    let s = bank.settle(&c, &t).unwrap();
    assert_eq!(s.penalty, 50);
    assert_eq!(bank.balance(&Account::Burn), 50);
    assert_eq!(bank.balance(&Account::Miner(7)), 50);
    assert_eq!(bank.balance(&Account::BlockPool), 10);
    assert_eq!(bank.balance(&Account::Miner(100)), 3);
    assert_eq!(bank.balance(&Account::Requester(1)), t.escrow() - 3);
    assert!(bank.conserved());
}

#[test]
fn withheld_flags_fail_the_task() {
    let oracle = TableOracle { honest: vec![true; 4], flags: Some(vec![0; 4]) };
    let c = finalize_task(Digest256::ZERO, 1, &[], Some((None, flag_commitment(&[0; 4]))), &oracle).unwrap();
    assert_eq!(c.reason, Some(FailReason::FlagsWithheld));
}

proptest! {
    #[test]
    fn forged_flag_reveals_are_detected(flags in proptest::collection::vec(0u8..3, 1..64), pos in any::<usize>(), delta in 1u8..3) {
        let commitment = flag_commitment(&flags);
        let mut forged = flags.clone();
        let i = pos % forged.len();
        forged[i] = (forged[i] + delta) % 3;
        let oracle = TableOracle { honest: vec![true; flags.len()], flags: Some(flags.clone()) };
        let c = finalize_task(Digest256::ZERO, 1, &[], Some((Some(&forged), commitment)), &oracle).unwrap();
        prop_assert!(!c.passed);
        prop_assert_eq!(c.reason, Some(FailReason::CommitmentMismatch));
    }

    #[test]
    fn honest_tasks_always_pass(stages in 5u32..60, alpha in 1usize..5, seed in any::<u64>(), ctf in any::<bool>()) {
        let flags = sample_flags(stages, 0.2, Seed(seed)).unwrap();
        let oracle = TableOracle { honest: vec![true; stages as usize], flags: ctf.then(|| flags.flags.clone()) };
        let mut rng = SplitMix64::new(seed);
        let reports: Vec<_> = (0..3).map(|v| Some(verifier_pass(&oracle, v, stages, alpha, &BTreeSet::new(), ctf, &mut rng).unwrap())).collect();
        let reveal = ctf.then(|| (Some(flags.flags.as_slice()), flags.commitment));
        let c = finalize_task(Digest256::ZERO, 9, &reports, reveal, &oracle).unwrap();
        prop_assert!(c.passed);
    }
}

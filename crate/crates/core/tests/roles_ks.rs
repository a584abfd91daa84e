use polchain_core::hashcore::{hash, Digest256};
use polchain_core::roles::{assign_tasks, form_groups, rank_deposit, SecurityDeposit, TaskContract, TaskPool};
use proptest::prelude::*;

/// Two-sided Kolmogorov–Smirnov statistic of a sample against U(0, 1).
fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

fn to_unit(d: &Digest256) -> f64 {
    (d.prefix_u64() >> 11) as f64 / (1u64 << 53) as f64
}

#[test]
fn deposit_ranks_are_uniform() {
    let sd = SecurityDeposit::new(7, 0, 100).unwrap();
    let xs: Vec<f64> = (0..20_000u64).map(|b| to_unit(&rank_deposit(&hash(&b.to_be_bytes()), &sd))).collect();
    let d = ks_uniform(xs);
    // 1% critical value for the one-sample KS test.
    assert!(d < 1.63 / (20_000f64).sqrt(), "KS statistic {d}");
}

#[test]
fn group_position_is_uniform_across_blocks() {
    // For a fixed miner, its position inside its group over many blocks should be uniform on 0..g.
    let g = 5;
    let deposits: Vec<SecurityDeposit> = (0..50).map(|i| SecurityDeposit::new(i, 0, 100).unwrap()).collect();
    let mut counts = [0u32; 5];
    let trials = 5_000u64;
    for b in 0..trials {
        let (groups, rest) = form_groups(deposits.clone(), Vec::new(), &hash(&b.to_le_bytes()), 1, g, 1).unwrap();
        assert!(rest.is_empty());
        let pos = groups.iter().find_map(|gr| gr.members.iter().position(|m| m.owner == 0)).unwrap();
        counts[pos] += 1;
    }
    let expect = trials as f64 / g as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // chi-square, 4 degrees of freedom, 0.1% critical value.
    assert!(chi2 < 18.47, "chi2 {chi2} counts {counts:?}");
}

proptest! {
    #[test]
    fn grouping_is_a_partition(n in 0usize..80, g in 2usize..10, summary in any::<[u8; 32]>()) {
        let deposits: Vec<SecurityDeposit> = (0..n as u64).map(|i| SecurityDeposit::new(i, 3, 100).unwrap()).collect();
        let (groups, rest) = form_groups(deposits.clone(), Vec::new(), &Digest256(summary), 4, g, 1).unwrap();
        prop_assert_eq!(groups.len(), n / g);
        prop_assert_eq!(rest.len(), n % g);
        let mut seen: Vec<u64> = groups.iter().flat_map(|gr| gr.members.iter().map(|m| m.owner)).chain(rest.iter().map(|m| m.owner)).collect();
        seen.sort();
        prop_assert_eq!(seen, (0..n as u64).collect::<Vec<_>>());
        for gr in &groups {
            prop_assert_eq!(gr.verifiers().len(), 1);
            prop_assert_eq!(gr.provers().len(), g - 1);
        }
    }

    #[test]
    fn assignment_is_a_matching(provers in 0usize..20, tasks in 0usize..20, summary in any::<[u8; 32]>()) {
        let sds: Vec<SecurityDeposit> = (0..provers as u64).map(|i| SecurityDeposit::new(i, 0, 100).unwrap()).collect();
        let mut pool = TaskPool::new();
        for i in 0..tasks as u64 {
            pool.insert(TaskContract { task_id: hash(&i.to_be_bytes()), reward: 10, stages: 10, spec_summary: Digest256::ZERO });
        }
        let a = assign_tasks(&sds, &mut pool, &Digest256(summary));
        prop_assert_eq!(a.pairs.len(), provers.min(tasks));
        prop_assert_eq!(a.waiting.len(), provers - a.pairs.len());
        prop_assert_eq!(pool.len(), tasks - a.pairs.len());
    }
}

//! Non-simulation experiments: protocol soundness, the cheating Monte Carlo,
//! incentive analytics and the masked matrix-multiplication backend.

use std::collections::BTreeSet;

use polchain_core::chain::{full_verify, genesis, make_template, validate_chain, Block, FullVerdict};
use polchain_core::hashcore::{hash, hash_parts, Digest256, Seed, SplitMix64, Threshold};
use polchain_core::incentives::{
    check_honest_conditions, check_honest_worst_case, gamma_sufficient, monotonicity_certificate, payoff_table, q_upper_bound,
    Condition, IncentiveParams, GRID_POINTS,
};
use polchain_core::ledger::{Ledger, LedgerEntry, ProtocolParams};
use polchain_core::proofs::{
    capture_flag, cheating_pass_rate, finalize_task, flag_commitment, Account, Bank, FailReason, ProofPackage, TableOracle,
    TaskTerms, VerificationContract,
};
use polchain_core::usefulwork::matmul::{
    mask_inputs, matmul_trace, unmask_counted, verify_step, verify_trace, LowRankMask, MatMulTaskSpec, Matrix,
};
use polchain_core::usefulwork::ml::{MlTask, WeightVector};
use polchain_core::usefulwork::UsefulWork;
use serde::Serialize;

use crate::config::ExperimentSpec;
use crate::report::{Check, Report};
use crate::RunError;

pub const TAMPER_CASES: u64 = 1000;
pub const REPLAY_CASES: u64 = 256;
pub const FORGERY_CASES: u64 = 1000;
pub const SETTLEMENTS: u64 = 10_000;
pub const CTF_DETECTION: f64 = 0.5;
/// The statistical checks accept deviations up to this many standard errors.
pub const SIGMAS: f64 = 3.0;
pub const CHEAT_STAGES: u32 = 100;
pub const CHEAT_RHOS: [f64; 4] = [0.25, 0.5, 0.75, 0.9];
/// `(kappa, alpha)`; kappa = 1/2 is verification with CTF, kappa = 1 without.
pub const CHEAT_KAPPA_ALPHA: [(f64, usize); 4] = [(0.5, 2), (0.5, 5), (1.0, 2), (1.0, 5)];

fn chain_params() -> ProtocolParams {
    ProtocolParams { p: 0.5, g: 5, g_v: 1, xi: 0.2 }
}

fn random_chain(len: usize, rng: &mut SplitMix64) -> Vec<Block> {
    let mut blocks = vec![genesis(chain_params(), Vec::new())];
    for i in 0..len {
        let prev = blocks.last().expect("genesis");
        let ledger =
            Ledger::new(vec![LedgerEntry::Deposit { sd_id: hash_parts(&[b"sd", &rng.next_u64().to_be_bytes()]), owner: i as u64, amount: 100 }])
                .to_bytes();
        let flag = match rng.next_below(4) {
            3 => None,
            f => Some(f as u8),
        };
        let b = make_template(prev, hash(&[i as u8]), ledger, hash(&rng.next_u64().to_be_bytes()), 1 + rng.next_below(50) as u32, flag);
        blocks.push(b);
    }
    blocks
}

fn mutate(b: &mut Block, field: u64, rng: &mut SplitMix64) {
    let flip = |d: &mut Digest256, rng: &mut SplitMix64| d.0[rng.next_below(32) as usize] ^= 1 << rng.next_below(8);
    match field {
        0 => flip(&mut b.prev_summary, rng),
        1 => flip(&mut b.sd_id, rng),
        2 => {
            let i = rng.next_below(b.ledger.len() as u64) as usize;
            b.ledger[i] ^= 1 << rng.next_below(8);
        }
        3 => flip(&mut b.work_summary, rng),
        4 => b.stage ^= 1 << rng.next_below(32),
        5 => {
            b.flag = match b.flag {
                None => Some(0),
                Some(f) => [None, Some((f + 1) % 3)][rng.next_below(2) as usize],
            }
        }
        _ => b.height ^= 1 << rng.next_below(64),
    }
}

/// Cases where mutating one field of a non-tip block invalidates the chain and unlinks its child.
fn tamper_fuzz(rng: &mut SplitMix64) -> u64 {
    let mut caught = 0;
    for _ in 0..TAMPER_CASES {
        let len = 2 + rng.next_below(8) as usize;
        let mut blocks = random_chain(len, rng);
        let k = 1 + rng.next_below(len as u64 - 1) as usize;
        let before = blocks[k].summary();
        mutate(&mut blocks[k], rng.next_below(7), rng);
        if blocks[k].summary() != before && validate_chain(&blocks).is_err() && blocks[k + 1].prev_summary != blocks[k].summary() {
            caught += 1;
        }
    }
    caught
}

/// Cases where a stage result replayed under a template at another height fails full verification.
fn replay_fuzz(rng: &mut SplitMix64) -> Result<(u64, u64), RunError> {
    let task = MlTask::reference(40, 4)?;
    let t = Threshold::new(1.0)?;
    let (mut valid, mut rejected) = (0, 0);
    for _ in 0..REPLAY_CASES {
        let blocks = random_chain(4, rng);
        let extra = 1 + rng.next_below(3) as usize;
        let stage = 1 + rng.next_below(9) as u32;
        let w_prev = WeightVector((0..3).map(|_| 2.0 * rng.next_f64() - 1.0).collect());
        let input = w_prev.to_bytes();
        let b = make_template(&blocks[0], hash(b"miner"), Ledger::new(Vec::new()).to_bytes(), hash(&input), stage, None);
        let seed = b.stage_seed()?;
        let out = task.compute_stage(&input, seed)?;
        let pkg = ProofPackage { stage, w_prev: input, seed, result_summary: hash(&out) };
        if full_verify(&b, &pkg, &task, &t) == FullVerdict::Accept {
            valid += 1;
        }
        let replay = make_template(&blocks[extra], b.sd_id, b.ledger.clone(), b.work_summary, b.stage, b.flag);
        if replay.height != b.height && matches!(full_verify(&replay, &pkg, &task, &t), FullVerdict::RejectInvalidWork(_)) {
            rejected += 1;
        }
    }
    Ok((valid, rejected))
}

/// Detection frequency of a skipped stage that claims a random non-zero flag.
fn ctf_detection(trials: u64, rng: &mut SplitMix64) -> Result<(f64, f64), RunError> {
    let mut caught = 0u64;
    for _ in 0..trials {
        let claimed = if rng.next_bool() { 1 } else { 2 };
        let oracle = TableOracle { honest: vec![false], flags: Some(vec![claimed]) };
        if capture_flag(&oracle, 1, rng)?.flag != Some(claimed) {
            caught += 1;
        }
    }
    let rate = caught as f64 / trials as f64;
    Ok((rate, (CTF_DETECTION * (1.0 - CTF_DETECTION) / trials as f64).sqrt()))
}

fn forgery_fuzz(rng: &mut SplitMix64) -> Result<u64, RunError> {
    let mut caught = 0;
    for _ in 0..FORGERY_CASES {
        let flags: Vec<u8> = (0..1 + rng.next_below(64)).map(|_| rng.next_below(3) as u8).collect();
        let commitment = flag_commitment(&flags);
        let mut forged = flags.clone();
        let i = rng.next_below(forged.len() as u64) as usize;
        forged[i] = (forged[i] + 1 + rng.next_below(2) as u8) % 3;
        let oracle = TableOracle { honest: vec![true; flags.len()], flags: Some(flags) };
        let c = finalize_task(Digest256::ZERO, 1, &[], Some((Some(&forged), commitment)), &oracle)?;
        if !c.passed && c.reason == Some(FailReason::CommitmentMismatch) {
            caught += 1;
        }
    }
    Ok(caught)
}

/// Settlements after which every credit is still accounted for and the task accounts are emptied.
fn conservation(rng: &mut SplitMix64) -> Result<u64, RunError> {
    let mut bank = Bank::new();
    let mut ok = 0;
    for i in 0..SETTLEMENTS {
        let t = TaskTerms {
            task_id: hash(&i.to_be_bytes()),
            requester: 1,
            prover_sd: hash_parts(&[b"sd", &i.to_be_bytes()]),
            reward: 100 + rng.next_below(1000),
            verify_reward: 3,
            flag_reward: 1,
            verifiers: 3,
            alpha: 2,
            gamma: rng.next_f64() * 0.2,
        };
        bank.mint(Account::Requester(1), t.escrow());
        bank.fund_task(&t)?;
        bank.mint(Account::Miner(7), 100);
        bank.transfer(Account::Miner(7), Account::Deposit(t.prover_sd), 100)?;
        for _ in 0..rng.next_below(3) {
            bank.mint(Account::BlockPool, 10);
            bank.withhold_block_reward(t.task_id, 10)?;
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
        bank.settle(&c, &t)?;
        if bank.conserved()
            && bank.balance(&Account::Escrow(t.task_id)) == 0
            && bank.balance(&Account::Withheld(t.task_id)) == 0
            && bank.total() == bank.minted()
        {
            ok += 1;
        }
    }
    Ok(ok)
}

#[derive(Serialize)]
struct CheatRow {
    rho: f64,
    kappa: f64,
    alpha: usize,
    trials: u64,
    pass_rate: f64,
    stderr: f64,
    bound: f64,
    within: bool,
}

pub fn protocol_check(spec: &ExperimentSpec) -> Result<Report, RunError> {
    let mut rng = SplitMix64::new(spec.sim.seed);
    let mut rep = Report::default();
    let all = |n: u64, of: u64| format!("{n}/{of}");

    let caught = tamper_fuzz(&mut rng);
    rep.checks.push(Check::new("tamper evidence", all(caught, TAMPER_CASES), "100% of mutated blocks invalidate descendants", caught == TAMPER_CASES));

    let (valid, rejected) = replay_fuzz(&mut rng)?;
    rep.checks.push(Check::new(
        "height binding",
        format!("{} honest accepted, {} replays rejected", all(valid, REPLAY_CASES), all(rejected, REPLAY_CASES)),
        "100% of replays at another height rejected",
        valid == REPLAY_CASES && rejected == REPLAY_CASES,
    ));

    let trials = spec.sweep.trials;
    let (rate, se) = ctf_detection(trials, &mut rng)?;
    rep.checks.push(Check::new(
        "CTF detection frequency",
        format!("{rate:.4} over {trials} stages"),
        format!("{CTF_DETECTION} ± {:.4} ({SIGMAS} stderr)", SIGMAS * se),
        (rate - CTF_DETECTION).abs() <= SIGMAS * se,
    ));

    let forged = forgery_fuzz(&mut rng)?;
    rep.checks.push(Check::new("flag commitment forgery", all(forged, FORGERY_CASES), "every forged reveal detected", forged == FORGERY_CASES));

    let conserved = conservation(&mut rng)?;
    rep.checks.push(Check::new("credit conservation", all(conserved, SETTLEMENTS), "every settlement conserves credits", conserved == SETTLEMENTS));

    let mut rows = Vec::new();
    for &(kappa, alpha) in &CHEAT_KAPPA_ALPHA {
        for &rho in &CHEAT_RHOS {
            let (pass_rate, stderr) = cheating_pass_rate(CHEAT_STAGES, rho, alpha, kappa < 1.0, trials, &mut rng)?;
            let bound = q_upper_bound(rho, kappa, alpha as u32)?;
            rows.push(CheatRow { rho, kappa, alpha, trials, pass_rate, stderr, bound, within: pass_rate <= bound + SIGMAS * stderr });
        }
    }
    let within = rows.iter().filter(|r| r.within).count();
    let worst = rows.iter().map(|r| (r.pass_rate - r.bound) / r.stderr.max(f64::MIN_POSITIVE)).fold(f64::NEG_INFINITY, f64::max);
    rep.checks.push(Check::new(
        "random-subset cheating pass rate",
        format!("{within}/{} points within bound; worst excess {worst:.2} stderr", rows.len()),
        format!("every point <= (1 - kappa + kappa rho)^alpha + {SIGMAS} stderr"),
        within == rows.len(),
    ));
    rep.csv(spec, "cheating_pass_rate.csv", &rows);
    rep.csv(spec, "protocol.csv", &rep.checks.clone());
    Ok(rep)
}

#[derive(Serialize)]
struct GammaRow {
    kappa: f64,
    alpha: u32,
    gamma_sufficient: f64,
    hypothesis_met: bool,
}

#[derive(Serialize)]
struct CertificateRow {
    kappa: f64,
    alpha: u32,
    f0: f64,
    max_increase: f64,
    non_increasing: bool,
    sup_at_zero: bool,
}

pub fn incentive_table(spec: &ExperimentSpec) -> Result<Report, RunError> {
    let mut rep = Report::default();
    let mut rows = Vec::new();
    for kappa in [0.5, 1.0] {
        for alpha in 1..=12 {
            let g = gamma_sufficient(kappa, alpha)?;
            rows.push(GammaRow { kappa, alpha, gamma_sufficient: g.value, hypothesis_met: g.hypothesis_met });
        }
    }
    let exact: Vec<u32> =
        (2..=12).filter(|&a| gamma_sufficient(0.5, a).map(|g| g.value == 1.0 / (2f64.powi(a as i32) - 1.0)).unwrap_or(false)).collect();
    rep.checks.push(Check::new("gamma_sufficient(1/2, alpha) = 1/(2^alpha - 1)", format!("exact for {} of 11 alphas", exact.len()), "exact for alpha in 2..=12", exact.len() == 11));
    let g5 = gamma_sufficient(0.5, 5)?.value;
    rep.checks.push(Check::new("gamma_sufficient(1/2, 5)", g5, "1/31", g5 == 1.0 / 31.0));
    rep.csv(spec, "gamma_sufficient.csv", &rows);

    let mut certs = Vec::new();
    for kappa in [0.5, 1.0] {
        for alpha in 2..=10 {
            let c = monotonicity_certificate(kappa, alpha);
            certs.push(CertificateRow { kappa, alpha, f0: c.f0, max_increase: c.max_increase, non_increasing: c.non_increasing, sup_at_zero: c.sup_at_zero });
        }
    }
    let ok = certs.iter().filter(|c| c.non_increasing && c.sup_at_zero).count();
    rep.checks.push(Check::new(
        "f(rho) non-increasing",
        format!("{ok}/{} (kappa, alpha) certificates on a {GRID_POINTS}-point grid", certs.len()),
        "every certificate non-increasing",
        ok == certs.len(),
    ));
    rep.csv(spec, "certificates.csv", &certs);

    let p = IncentiveParams::reference();
    let base = check_honest_worst_case(&p);
    rep.checks.push(Check::new("honest conditions at the reference scenario", format!("{:?}", base.violated), "all three hold", base.holds));
    let q0 = p.k(0.0);
    let lowered = IncentiveParams { gamma: 0.5 * q0 / (1.0 - q0), ..p };
    let low = check_honest_conditions(&lowered, |rho| lowered.k(rho));
    rep.checks.push(Check::new(
        "gamma below q(0)/(1 - q(0)) flags the violated condition",
        format!("{:?}", low.violated.map(|v| v.0)),
        format!("{:?}", Some(Condition::FullCheatUnprofitable)),
        !low.holds && low.violated.map(|v| v.0) == Some(Condition::FullCheatUnprofitable),
    ));
    rep.csv(spec, "payoff.csv", &payoff_table(&p, 20));
    Ok(rep)
}

#[derive(Serialize)]
struct MatMulRow {
    case: usize,
    m: usize,
    r: usize,
    mask_rank: usize,
    exact: bool,
    unmask_ops: u64,
    perturbations_rejected: usize,
    steps: usize,
}

pub const MATMUL_CASES: usize = 100;

pub fn matmul_demo(spec: &ExperimentSpec) -> Result<Report, RunError> {
    let mut rng = SplitMix64::new(spec.sim.seed);
    let int_matrix = |m: usize, rng: &mut SplitMix64| Matrix::from_fn(m, m, |_, _| rng.next_below(41) as i64 - 20);
    let mut rows = Vec::new();
    let mut seeds_ok = 0;
    for case in 0..MATMUL_CASES {
        let m = [4usize, 8, 16][rng.next_below(3) as usize];
        let divisors: Vec<usize> = (1..m).filter(|r| m % r == 0).collect();
        let r = divisors[rng.next_below(divisors.len() as u64) as usize];
        let rank = 1 + rng.next_below(2) as usize;
        let (x, y) = (int_matrix(m, &mut rng), int_matrix(m, &mut rng));
        let e = LowRankMask::random_int(m, rank, 9, &mut rng);
        let f = LowRankMask::random_int(m, rank, 9, &mut rng);
        let (xp, yp) = mask_inputs(&x, &y, &e, &f)?;
        let task = MatMulTaskSpec::new(xp, yp, r, rank)?;
        let s1 = Seed(rng.next_u64());
        let trace = matmul_trace(&task, s1);
        // With few steps two seeds often pick the same order; draw until the order differs.
        let mut other = matmul_trace(&task, Seed(rng.next_u64()));
        for _ in 0..64 {
            if other.permutation != trace.permutation {
                break;
            }
            other = matmul_trace(&task, Seed(rng.next_u64()));
        }
        let (z, ops) = unmask_counted(trace.final_product(), &x, &e, &task.y_masked, &f)?;
        let exact = z == x.matmul(&y)?;
        if other.final_product() == trace.final_product() && other.intermediates != trace.intermediates {
            seeds_ok += 1;
        }
        // One perturbed entry in one block of each intermediate product.
        let honest_ok = verify_trace(&task, &trace, s1);
        let mut rejected = 0;
        let steps = task.steps();
        for step in 1..=steps {
            let (bi, bj) = (rng.next_below(steps as u64) as usize, rng.next_below(steps as u64) as usize);
            let (i, j) = (bi * r + rng.next_below(r as u64) as usize, bj * r + rng.next_below(r as u64) as usize);
            let mut bad = trace.clone();
            let old = bad.intermediates[step - 1].get(i, j);
            bad.intermediates[step - 1].set(i, j, old + 1);
            if honest_ok && !verify_step(&task, &bad, step, bi, bj) && !verify_trace(&task, &bad, s1) {
                rejected += 1;
            }
        }
        rows.push(MatMulRow { case, m, r, mask_rank: rank, exact, unmask_ops: ops, perturbations_rejected: rejected, steps });
    }
    let exact = rows.iter().filter(|r| r.exact).count();
    let perturbed: usize = rows.iter().map(|r| r.steps).sum();
    let rejected: usize = rows.iter().map(|r| r.perturbations_rejected).sum();
    let sizes: BTreeSet<usize> = rows.iter().map(|r| r.m).collect();
    let mut rep = Report::default();
    rep.checks.push(Check::new("unmask recovers X*Y exactly", format!("{exact}/{MATMUL_CASES} cases, m in {sizes:?}"), "all cases", exact == MATMUL_CASES));
    rep.checks.push(Check::new(
        "two seeds: same product, different intermediates",
        format!("{seeds_ok}/{MATMUL_CASES}"),
        "all cases",
        seeds_ok == MATMUL_CASES,
    ));
    rep.checks.push(Check::new("perturbed intermediate blocks rejected", format!("{rejected}/{perturbed}"), "all perturbations", rejected == perturbed));
    rep.csv(spec, "matmul.csv", &rows);
    Ok(rep)
}

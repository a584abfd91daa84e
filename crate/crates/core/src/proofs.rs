//! Task proofs, committee verification, the capture-the-flag game and settlement.
//!
//! A prover uploads one [`ProofPackage`] per stage. In CTF mode each stage is
//! trained under `derive_ctf_seed(base, flag)` with a secret flag; the flag
//! vector is committed by hash and only revealed after every verifier has
//! reported, so verifiers must recompute to learn which flag was used.
//!
//! Verifiers check stages through a [`StageOracle`]: [`RecomputeOracle`]
//! reruns the real backend, [`TableOracle`] answers from a known
//! honest/dishonest table so large simulations can reuse the same logic.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashcore::{derive_ctf_seed, derive_seed, hash, Digest256, HashError, Seed, SplitMix64};
use crate::usefulwork::{UsefulWork, WorkError};

pub const DEFAULT_VERIFIER_TIMEOUT: u64 = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProofError {
    #[error("cannot select {alpha} stages from {eligible} eligible")]
    TooManyStages { alpha: usize, eligible: usize },
    #[error("flag ratio must lie in [0, 1], got {0}")]
    FlagRatio(f64),
    #[error("stage {0} is outside the task")]
    NoSuchStage(u32),
    #[error("proof blob {0} is unavailable")]
    Unavailable(Digest256),
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error(transparent)]
    Work(#[from] WorkError),
    #[error("insufficient balance in {0:?}: need {1}, have {2}")]
    Insufficient(Account, u64, u64),
}

/// `P_s = {W_{s-1}, phi_s, f_H(W_s)}`. In CTF mode `seed` is the base seed; the flag stays secret.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofPackage {
    pub stage: u32,
    pub w_prev: Vec<u8>,
    pub seed: Seed,
    pub result_summary: Digest256,
}

/// All stage packages of one task plus the final output and, in CTF mode, the flag commitment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskProof {
    pub initial_summary: Digest256,
    pub packages: Vec<ProofPackage>,
    pub final_output: Vec<u8>,
    pub flag_commitment: Option<Digest256>,
    /// Stages that produced a block; their flags are public.
    pub block_stages: BTreeSet<u32>,
    /// Per-stage template summaries, when the verifier wants to check seed binding.
    pub templates: Vec<Digest256>,
}

impl TaskProof {
    pub fn stages(&self) -> u32 {
        self.packages.len() as u32
    }

    pub fn package(&self, s: u32) -> Result<&ProofPackage, ProofError> {
        if s == 0 {
            return Err(ProofError::NoSuchStage(s));
        }
        self.packages.get(s as usize - 1).ok_or(ProofError::NoSuchStage(s))
    }

    /// `hash(W_{s-1})` must equal the previous stage's committed result (or the task's initial weights).
    pub fn linkage_ok(&self, s: u32) -> Result<bool, ProofError> {
        let pkg = self.package(s)?;
        let expect = if s == 1 { self.initial_summary } else { self.package(s - 1)?.result_summary };
        let tail_ok = s != self.stages() || hash(&self.final_output) == pkg.result_summary;
        Ok(pkg.stage == s && hash(&pkg.w_prev) == expect && tail_ok)
    }

    /// If templates were supplied, `seed` must be `derive_seed(template_s, s)`.
    pub fn seed_binding_ok(&self, s: u32) -> Result<bool, ProofError> {
        let pkg = self.package(s)?;
        match self.templates.get(s as usize - 1) {
            Some(t) => Ok(derive_seed(t, u64::from(s))? == pkg.seed),
            None => Ok(true),
        }
    }
}

/// Run a whole task and package every stage.
///
/// `template(s, w_prev, flag)` returns the summary of the template block the prover
/// builds for stage `s`; the stage is trained under that template's seed (mixed with
/// the stage flag in CTF mode). Stages for which `skip(s)` holds are not trained: the
/// prover passes `w_prev` through unchanged and commits to it as if it were the result.
pub fn prove_task<W: UsefulWork>(
    work: &W,
    w0: Vec<u8>,
    stages: u32,
    flags: Option<&FlagVector>,
    mut template: impl FnMut(u32, &[u8], Option<u8>) -> Digest256,
    skip: impl Fn(u32) -> bool,
) -> Result<TaskProof, ProofError> {
    let initial_summary = hash(&w0);
    let mut w = w0;
    let mut packages = Vec::with_capacity(stages as usize);
    let mut templates = Vec::with_capacity(stages as usize);
    for s in 1..=stages {
        let flag = flags.map(|f| f.flag(s));
        let t = template(s, &w, flag);
        let base = derive_seed(&t, u64::from(s))?;
        let out = if skip(s) {
            w.clone()
        } else {
            let seed = match flag {
                Some(f) => derive_ctf_seed(base, f)?,
                None => base,
            };
            work.compute_stage(&w, seed)?
        };
        packages.push(ProofPackage { stage: s, w_prev: w, seed: base, result_summary: hash(&out) });
        templates.push(t);
        w = out;
    }
    Ok(TaskProof {
        initial_summary,
        packages,
        final_output: w,
        flag_commitment: flags.map(|f| f.commitment),
        block_stages: BTreeSet::new(),
        templates,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagVector {
    pub flags: Vec<u8>,
    pub commitment: Digest256,
}

pub fn flag_commitment(flags: &[u8]) -> Digest256 {
    hash(flags)
}

impl FlagVector {
    pub fn new(flags: Vec<u8>) -> Self {
        let commitment = flag_commitment(&flags);
        FlagVector { flags, commitment }
    }

    /// Flag of 1-based stage `s`.
    pub fn flag(&self, s: u32) -> u8 {
        self.flags[s as usize - 1]
    }
}

/// i.i.d. flags with `P(0) = 1 - xi`, `P(1) = P(2) = xi / 2`.
pub fn sample_flags(stages: u32, xi: f64, seed: Seed) -> Result<FlagVector, ProofError> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(ProofError::FlagRatio(xi));
    }
    let mut rng = SplitMix64::from_seed(seed);
    let flags = (0..stages)
        .map(|_| {
            let u = rng.next_f64();
            if u >= xi {
                0
            } else if u < xi / 2.0 {
                1
            } else {
                2
            }
        })
        .collect();
    Ok(FlagVector::new(flags))
}

/// `alpha` distinct 1-based stages drawn uniformly from `1..=stages` minus `excluded`, sorted.
pub fn select_stages(stages: u32, alpha: usize, excluded: &BTreeSet<u32>, rng: &mut SplitMix64) -> Result<Vec<u32>, ProofError> {
    let n_eligible = stages as usize - excluded.range(1..=stages).count();
    if alpha > n_eligible {
        return Err(ProofError::TooManyStages { alpha, eligible: n_eligible });
    }
    if alpha * 4 <= n_eligible {
        // Sparse case: rejection keeps every alpha-subset equally likely without materializing the range.
        let mut out = Vec::with_capacity(alpha);
        while out.len() < alpha {
            let s = 1 + rng.next_below(u64::from(stages)) as u32;
            if !excluded.contains(&s) && !out.contains(&s) {
                out.push(s);
            }
        }
        out.sort_unstable();
        return Ok(out);
    }
    let mut eligible: Vec<u32> = (1..=stages).filter(|s| !excluded.contains(s)).collect();
    // Partial Fisher–Yates: the first `alpha` slots end up a uniform sample.
    for i in 0..alpha {
        let j = i + rng.next_below((eligible.len() - i) as u64) as usize;
        eligible.swap(i, j);
    }
    let mut out = eligible[..alpha].to_vec();
    out.sort_unstable();
    Ok(out)
}

/// Answers "does stage `s` reproduce its committed result under this flag?" (`None` = plain mode).
pub trait StageOracle {
    fn reproduces(&self, stage: u32, flag: Option<u8>) -> Result<bool, ProofError>;
}

/// Reruns the backend on the uploaded packages.
pub struct RecomputeOracle<'a, W> {
    pub work: &'a W,
    pub proof: &'a TaskProof,
}

impl<W: UsefulWork> StageOracle for RecomputeOracle<'_, W> {
    fn reproduces(&self, stage: u32, flag: Option<u8>) -> Result<bool, ProofError> {
        if !self.proof.linkage_ok(stage)? || !self.proof.seed_binding_ok(stage)? {
            return Ok(false);
        }
        let pkg = self.proof.package(stage)?;
        let seed = match flag {
            Some(f) => derive_ctf_seed(pkg.seed, f)?,
            None => pkg.seed,
        };
        // A recomputation that errors (e.g. diverges) cannot reproduce the commitment.
        Ok(match self.work.compute_stage(&pkg.w_prev, seed) {
            Ok(out) => hash(&out) == pkg.result_summary,
            Err(_) => false,
        })
    }
}

/// Truth table: stage `s` reproduces iff it was trained honestly and the flag matches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableOracle {
    pub honest: Vec<bool>,
    pub flags: Option<Vec<u8>>,
}

impl StageOracle for TableOracle {
    fn reproduces(&self, stage: u32, flag: Option<u8>) -> Result<bool, ProofError> {
        let i = (stage as usize).checked_sub(1).filter(|i| *i < self.honest.len()).ok_or(ProofError::NoSuchStage(stage))?;
        let flag_ok = match (&self.flags, flag) {
            (Some(fs), Some(f)) => fs[i] == f,
            (None, None) => true,
            _ => false,
        };
        Ok(self.honest[i] && flag_ok)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageVerdict {
    Pass,
    Fail,
}

/// Plain-mode check of one stage: linkage, seed binding and recomputation.
pub fn verify_stage_plain<W: UsefulWork>(proof: &TaskProof, stage: u32, work: &W) -> Result<StageVerdict, ProofError> {
    let oracle = RecomputeOracle { work, proof };
    Ok(if oracle.reproduces(stage, None)? { StageVerdict::Pass } else { StageVerdict::Fail })
}

/// One verified stage as reported by a verifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u32,
    /// Reported flag in CTF mode; `None` in plain mode.
    pub flag: Option<u8>,
    /// Whether one of the attempted recomputations reproduced the result.
    pub confirmed: bool,
    pub recomputations: u8,
}

/// Flag capture: try flag 0; on failure pick 1 or 2 at random and retry; if that fails too, report the other one.
pub fn capture_flag<O: StageOracle>(oracle: &O, stage: u32, rng: &mut SplitMix64) -> Result<StageReport, ProofError> {
    if oracle.reproduces(stage, Some(0))? {
        return Ok(StageReport { stage, flag: Some(0), confirmed: true, recomputations: 1 });
    }
    let c = if rng.next_bool() { 1 } else { 2 };
    if oracle.reproduces(stage, Some(c))? {
        return Ok(StageReport { stage, flag: Some(c), confirmed: true, recomputations: 2 });
    }
    Ok(StageReport { stage, flag: Some(3 - c), confirmed: false, recomputations: 2 })
}

/// Plain-mode counterpart of [`capture_flag`].
pub fn check_plain<O: StageOracle>(oracle: &O, stage: u32) -> Result<StageReport, ProofError> {
    let ok = oracle.reproduces(stage, None)?;
    Ok(StageReport { stage, flag: None, confirmed: ok, recomputations: 1 })
}

/// Select `alpha` stages and check each one (CTF or plain).
pub fn verifier_pass<O: StageOracle>(
    oracle: &O,
    verifier: u64,
    stages: u32,
    alpha: usize,
    block_stages: &BTreeSet<u32>,
    ctf: bool,
    rng: &mut SplitMix64,
) -> Result<VerifierReport, ProofError> {
    let excluded = if ctf { block_stages.clone() } else { BTreeSet::new() };
    let picks = select_stages(stages, alpha, &excluded, rng)?;
    let checks = picks
        .into_iter()
        .map(|s| if ctf { capture_flag(oracle, s, rng) } else { check_plain(oracle, s) })
        .collect::<Result<_, _>>()?;
    Ok(VerifierReport { verifier, checks })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierReport {
    pub verifier: u64,
    pub checks: Vec<StageReport>,
}

impl VerifierReport {
    pub fn recomputations(&self) -> u64 {
        self.checks.iter().map(|c| u64::from(c.recomputations)).sum()
    }
}

/// A report submitted at some stage; anything later than `job_start + timeout` counts as missing.
pub fn apply_timeout(reports: Vec<(VerifierReport, u64)>, job_start: u64, timeout: u64) -> Vec<Option<VerifierReport>> {
    reports
        .into_iter()
        .map(|(r, at)| (at <= job_start + timeout).then_some(r))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    FlagsWithheld,
    CommitmentMismatch,
    BadStage(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationContract {
    pub task_id: Digest256,
    pub prover: u64,
    pub passed: bool,
    pub reason: Option<FailReason>,
    /// Verifiers that reported in time.
    pub reporting: Vec<u64>,
    /// Correct non-zero flag captures per verifier.
    pub flag_captures: BTreeMap<u64, u32>,
    /// Extra recomputations spent confirming accusations.
    pub confirmations: u64,
}

/// Aggregate verifier reports into the task verdict.
///
/// `revealed` is the prover's flag vector (CTF mode) or `None` if it was withheld;
/// `commitment` is the hash published with the final proof. An accused stage fails
/// the task only if every other reporting verifier confirms it by recomputing under the
/// revealed flag.
pub fn finalize_task<O: StageOracle>(
    task_id: Digest256,
    prover: u64,
    reports: &[Option<VerifierReport>],
    ctf: Option<(Option<&[u8]>, Digest256)>,
    oracle: &O,
) -> Result<VerificationContract, ProofError> {
    let reporting: Vec<&VerifierReport> = reports.iter().flatten().collect();
    let mut contract = VerificationContract {
        task_id,
        prover,
        passed: true,
        reason: None,
        reporting: reporting.iter().map(|r| r.verifier).collect(),
        flag_captures: BTreeMap::new(),
        confirmations: 0,
    };
    let revealed = match ctf {
        None => None,
        Some((None, _)) => {
            contract.passed = false;
            contract.reason = Some(FailReason::FlagsWithheld);
            return Ok(contract);
        }
        Some((Some(flags), commitment)) => {
            if flag_commitment(flags) != commitment {
                contract.passed = false;
                contract.reason = Some(FailReason::CommitmentMismatch);
                return Ok(contract);
            }
            Some(flags)
        }
    };
    let mut accused = BTreeMap::<u32, u64>::new();
    for r in &reporting {
        for c in &r.checks {
            let truth = revealed.map(|fs| fs.get(c.stage as usize - 1).copied());
            let bad = match (truth, c.flag) {
                (Some(Some(t)), Some(f)) => {
                    if f == t && f != 0 {
                        *contract.flag_captures.entry(r.verifier).or_default() += 1;
                    }
                    f != t
                }
                (Some(None), _) => return Err(ProofError::NoSuchStage(c.stage)),
                _ => !c.confirmed,
            };
            if bad {
                accused.entry(c.stage).or_insert(r.verifier);
            }
        }
    }
    for (stage, accuser) in accused {
        let flag = revealed.map(|fs| fs[stage as usize - 1]);
        let others = reporting.iter().filter(|r| r.verifier != accuser).count() as u64;
        contract.confirmations += others;
        // Every other verifier runs the same deterministic recomputation, so they agree iff it fails.
        if !oracle.reproduces(stage, flag)? {
            contract.passed = false;
            contract.reason = Some(FailReason::BadStage(stage));
            break;
        }
    }
    Ok(contract)
}

/// Empirical pass rate of a prover that trains a random `round(rho * stages)` subset of its
/// stages, against one verifier checking `alpha` stages (with CTF: detection 1/2 per skipped
/// stage; without: 1). Skipped stages claim a random non-zero flag. Returns `(rate, stderr)`.
pub fn cheating_pass_rate(
    stages: u32,
    rho: f64,
    alpha: usize,
    ctf: bool,
    trials: u64,
    rng: &mut SplitMix64,
) -> Result<(f64, f64), ProofError> {
    let honest_count = ((rho * f64::from(stages)).round() as usize).min(stages as usize);
    let mut passed = 0u64;
    let mut order: Vec<usize> = (0..stages as usize).collect();
    for _ in 0..trials {
        for i in 0..honest_count {
            let j = i + rng.next_below((order.len() - i) as u64) as usize;
            order.swap(i, j);
        }
        let mut honest = vec![false; stages as usize];
        for &i in &order[..honest_count] {
            honest[i] = true;
        }
        let flags = ctf.then(|| {
            honest.iter().map(|h| if *h { 0 } else if rng.next_bool() { 1 } else { 2 }).collect::<Vec<u8>>()
        });
        let oracle = TableOracle { honest, flags };
        let report = verifier_pass(&oracle, 0, stages, alpha, &BTreeSet::new(), ctf, rng)?;
        let reveal = oracle.flags.as_deref().map(|f| (Some(f), flag_commitment(f)));
        if finalize_task(Digest256::ZERO, 0, &[Some(report)], reveal, &oracle)?.passed {
            passed += 1;
        }
    }
    let rate = passed as f64 / trials as f64;
    Ok((rate, (rate * (1.0 - rate) / trials as f64).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Account {
    Miner(u64),
    Requester(u64),
    Deposit(Digest256),
    Escrow(Digest256),
    Withheld(Digest256),
    BlockPool,
    Burn,
}

/// Integer credit ledger. Credits only enter via [`Bank::mint`]; every other move is a transfer.
#[derive(Clone, Debug, Default)]
pub struct Bank {
    balances: BTreeMap<Account, u64>,
    minted: u64,
}

/// Economic terms of one task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskTerms {
    pub task_id: Digest256,
    pub requester: u64,
    pub prover_sd: Digest256,
    pub reward: u64,
    pub verify_reward: u64,
    pub flag_reward: u64,
    pub verifiers: u32,
    pub alpha: u32,
    pub gamma: f64,
}

impl TaskTerms {
    /// `R_t + g_v * verify_reward + g_v * alpha * flag_reward`.
    pub fn escrow(&self) -> u64 {
        self.reward
            + u64::from(self.verifiers) * self.verify_reward
            + u64::from(self.verifiers) * u64::from(self.alpha) * self.flag_reward
    }

    pub fn penalty(&self) -> u64 {
        (self.gamma * self.reward as f64).round() as u64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Settlement {
    pub prover_credit: u64,
    pub penalty: u64,
    pub verifier_credit: u64,
    pub refunded: u64,
}

impl Bank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mint(&mut self, to: Account, amount: u64) {
        *self.balances.entry(to).or_default() += amount;
        self.minted += amount;
    }

    pub fn balance(&self, a: &Account) -> u64 {
        self.balances.get(a).copied().unwrap_or(0)
    }

    pub fn transfer(&mut self, from: Account, to: Account, amount: u64) -> Result<(), ProofError> {
        let have = self.balance(&from);
        if have < amount {
            return Err(ProofError::Insufficient(from, amount, have));
        }
        if amount == 0 {
            return Ok(());
        }
        *self.balances.get_mut(&from).expect("balance checked") -= amount;
        *self.balances.entry(to).or_default() += amount;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.balances.values().sum()
    }

    pub fn minted(&self) -> u64 {
        self.minted
    }

    pub fn conserved(&self) -> bool {
        self.total() == self.minted
    }

    /// Lock the requester's escrow for a task.
    pub fn fund_task(&mut self, terms: &TaskTerms) -> Result<(), ProofError> {
        self.transfer(Account::Requester(terms.requester), Account::Escrow(terms.task_id), terms.escrow())
    }

    /// Move a block reward from the pool into the task's withheld account.
    pub fn withhold_block_reward(&mut self, task_id: Digest256, amount: u64) -> Result<(), ProofError> {
        self.transfer(Account::BlockPool, Account::Withheld(task_id), amount)
    }

    /// Apply a finalized contract. On failure the penalty (capped at the deposit) is burned and
    /// the rest of the deposit goes back to the miner.
    pub fn settle(&mut self, c: &VerificationContract, terms: &TaskTerms) -> Result<Settlement, ProofError> {
        let escrow = Account::Escrow(terms.task_id);
        let withheld = Account::Withheld(terms.task_id);
        let prover = Account::Miner(c.prover);
        let mut s = Settlement::default();
        for v in &c.reporting {
            let extra = u64::from(c.flag_captures.get(v).copied().unwrap_or(0)) * terms.flag_reward;
            let amt = terms.verify_reward + extra;
            self.transfer(escrow, Account::Miner(*v), amt)?;
            s.verifier_credit += amt;
        }
        let held = self.balance(&withheld);
        if c.passed {
            self.transfer(escrow, prover, terms.reward)?;
            self.transfer(withheld, prover, held)?;
            s.prover_credit = terms.reward + held;
        } else {
            self.transfer(escrow, Account::Requester(terms.requester), terms.reward)?;
            self.transfer(withheld, Account::BlockPool, held)?;
            let dep = Account::Deposit(terms.prover_sd);
            let pen = terms.penalty().min(self.balance(&dep));
            self.transfer(dep, Account::Burn, pen)?;
            let rest = self.balance(&dep);
            self.transfer(dep, prover, rest)?;
            s.penalty = pen;
            s.refunded += terms.reward;
        }
        let left = self.balance(&escrow);
        self.transfer(escrow, Account::Requester(terms.requester), left)?;
        s.refunded += left;
        Ok(s)
    }
}

/// Layer-2 blob storage with a fixed availability latency.
#[derive(Clone, Debug, Default)]
pub struct ContentStore {
    blobs: HashMap<Digest256, (Vec<u8>, u64)>,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store a blob at stage `now`; it becomes readable at `now + latency`.
    pub fn put(&mut self, blob: Vec<u8>, now: u64, latency: u64) -> Digest256 {
        let id = hash(&blob);
        self.blobs.entry(id).or_insert((blob, now + latency));
        id
    }

    pub fn get(&self, id: &Digest256, now: u64) -> Result<&[u8], ProofError> {
        match self.blobs.get(id) {
            Some((b, at)) if *at <= now => Ok(b),
            _ => Err(ProofError::Unavailable(*id)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_extremes() {
        let f = sample_flags(1000, 0.0, Seed(1)).unwrap();
        assert!(f.flags.iter().all(|x| *x == 0));
        let f = sample_flags(10_000, 1.0, Seed(2)).unwrap();
        assert!(f.flags.iter().all(|x| *x != 0));
        let ones = f.flags.iter().filter(|x| **x == 1).count() as f64;
        assert!((ones / 10_000.0 - 0.5).abs() < 0.03);
        assert!(sample_flags(3, 1.5, Seed(0)).is_err());
    }

    #[test]
    fn select_all_and_too_many() {
        let mut rng = SplitMix64::new(3);
        assert_eq!(select_stages(5, 5, &BTreeSet::new(), &mut rng).unwrap(), vec![1, 2, 3, 4, 5]);
        let ex: BTreeSet<u32> = [2, 4].into();
        assert!(select_stages(5, 4, &ex, &mut rng).is_err());
        assert_eq!(select_stages(5, 3, &ex, &mut rng).unwrap(), vec![1, 3, 5]);
    }

    fn table(honest: Vec<bool>, flags: Vec<u8>) -> TableOracle {
        TableOracle { honest, flags: Some(flags) }
    }

    #[test]
    fn capture_honest_stages() {
        let o = table(vec![true, true], vec![0, 1]);
        let mut rng = SplitMix64::new(0);
        let r = capture_flag(&o, 1, &mut rng).unwrap();
        assert_eq!((r.flag, r.confirmed, r.recomputations), (Some(0), true, 1));
        for _ in 0..20 {
            let r = capture_flag(&o, 2, &mut rng).unwrap();
            assert_eq!(r.flag, Some(1));
            assert_eq!(r.recomputations, 2);
        }
    }

    #[test]
    fn withheld_or_forged_flags_fail() {
        let o = table(vec![true; 3], vec![0, 1, 2]);
        let fv = FlagVector::new(vec![0, 1, 2]);
        let id = hash(b"task");
        let c = finalize_task(id, 1, &[], Some((None, fv.commitment)), &o).unwrap();
        assert_eq!(c.reason, Some(FailReason::FlagsWithheld));
        let forged = [0u8, 2, 2];
        let c = finalize_task(id, 1, &[], Some((Some(&forged), fv.commitment)), &o).unwrap();
        assert_eq!(c.reason, Some(FailReason::CommitmentMismatch));
        let c = finalize_task(id, 1, &[], Some((Some(&fv.flags), fv.commitment)), &o).unwrap();
        assert!(c.passed);
    }

    #[test]
    fn bank_rejects_overdraft() {
        let mut b = Bank::new();
        b.mint(Account::Miner(1), 5);
        assert!(b.transfer(Account::Miner(1), Account::Burn, 6).is_err());
        b.transfer(Account::Miner(1), Account::Burn, 5).unwrap();
        assert!(b.conserved());
    }

    #[test]
    fn content_store_latency() {
        let mut cs = ContentStore::new();
        let id = cs.put(vec![1, 2], 10, 1);
        assert!(cs.get(&id, 10).is_err());
        assert_eq!(cs.get(&id, 11).unwrap(), &[1, 2]);
        assert!(cs.get(&hash(b"missing"), 100).is_err());
    }
}

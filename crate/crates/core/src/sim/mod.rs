//! Stage-synchronous simulation of the whole protocol.
//!
//! Every simulation stage each miner does exactly one thing: trains a task
//! stage (useful, `c_u`), trains redundantly while it has no task (`c_r`),
//! re-executes a stage of a received block (`c_bv`, once per block), recomputes
//! a stage of a task it verifies (`c_tv`), or waits (downloads, idle). Stages
//! that end with training get a block generation opportunity.
//!
//! When blocks are found in a stage they all extend the same parent; the
//! network sees them in a random order and the first one wins. Every miner
//! except the producer then pauses to verify the block: the producer's own
//! committee for `committee_block_verify` stages, everyone else for
//! `network_block_verify` stages. Deposits carried by a block are grouped once the
//! block has been verified network-wide, after which group members download the
//! dataset and start their roles.

mod config;

pub use config::*;

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::chain::{check_bgo, genesis, make_template, AcceptOutcome, Block, ChainState};
use crate::hashcore::{hash_parts, Digest256, Seed, SplitMix64, Threshold};
use crate::ledger::{Ledger, LedgerEntry, ProtocolParams};
use crate::proofs::{
    finalize_task, flag_commitment, sample_flags, verifier_pass, Account, Bank, ProofError, StageOracle, TaskTerms,
    VerifierReport,
};
use crate::roles::{assign_tasks, form_groups, SecurityDeposit, TaskContract, TaskPool};
use crate::usefulwork::surrogate::surrogate_stage;

/// Requester account that funds every simulated task.
const REQUESTER: u64 = u64::MAX;

/// Dense storage with id reuse; ids stay valid until removed.
#[derive(Clone, Debug)]
struct Slab<T> {
    items: Vec<Option<T>>,
    free: Vec<u64>,
}

impl<T> Default for Slab<T> {
    fn default() -> Self {
        Slab { items: Vec::new(), free: Vec::new() }
    }
}

impl<T> Slab<T> {
    fn insert(&mut self, item: T) -> u64 {
        match self.free.pop() {
            Some(id) => {
                self.items[id as usize] = Some(item);
                id
            }
            None => {
                self.items.push(Some(item));
                self.items.len() as u64 - 1
            }
        }
    }

    fn get(&self, id: u64) -> Option<&T> {
        self.items.get(id as usize).and_then(Option::as_ref)
    }

    fn get_mut(&mut self, id: u64) -> Option<&mut T> {
        self.items.get_mut(id as usize).and_then(Option::as_mut)
    }

    fn remove(&mut self, id: u64) -> Option<T> {
        let item = self.items.get_mut(id as usize)?.take();
        if item.is_some() {
            self.free.push(id);
        }
        item
    }
}

impl<T> std::ops::Index<u64> for Slab<T> {
    type Output = T;
    fn index(&self, id: u64) -> &T {
        self.get(id).expect("live slab entry")
    }
}

/// What a miner spent one stage on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activity {
    Useful,
    Redundant,
    BlockVerify,
    TaskVerify,
    Idle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum After {
    Prover(u64),
    Verifier(u64),
}

#[derive(Clone, Debug)]
struct Busy {
    task: u64,
    left: u32,
    report: VerifierReport,
    started: u64,
}

#[derive(Clone, Debug)]
enum Role {
    /// Deposit submitted, not yet grouped.
    Awaiting,
    Downloading { left: u32, then: After },
    Prover { task: u64 },
    Verifier { group: u64, queue: VecDeque<(u64, u64)>, busy: Option<Busy>, verified: usize },
}

#[derive(Clone, Debug)]
struct Miner {
    role: Role,
    view: usize,
    pause_left: u32,
    bv_owed: u32,
    /// Holds weights from an earlier stage, so it can train redundantly.
    has_weights: bool,
    dishonest: bool,
    nonce: u64,
    current_sd: Digest256,
    /// Post-warmup stages spent outside verifier duty.
    prover_time: u64,
    /// Post-warmup task rewards minus penalties.
    task_reward: i64,
}

#[derive(Clone, Debug)]
struct TaskRec {
    id: Digest256,
    prover: u32,
    group: u64,
    stages: u32,
    done: u32,
    skip_debt: f64,
    sd: Digest256,
    plan: Option<Vec<bool>>,
    flags: Option<Vec<u8>>,
    block_stages: BTreeSet<u32>,
    reports: Vec<(VerifierReport, u64, u64)>,
    terms: TaskTerms,
}

impl TaskRec {
    fn honest(&self, s: u32) -> bool {
        self.plan.as_ref().is_none_or(|p| p[s as usize - 1])
    }
}

impl StageOracle for TaskRec {
    fn reproduces(&self, stage: u32, flag: Option<u8>) -> Result<bool, ProofError> {
        if stage == 0 || stage > self.stages {
            return Err(ProofError::NoSuchStage(stage));
        }
        let flag_ok = match (&self.flags, flag) {
            (Some(fs), Some(f)) => fs[stage as usize - 1] == f,
            (None, None) => true,
            _ => false,
        };
        Ok(flag_ok && self.honest(stage))
    }
}

#[derive(Clone, Debug)]
struct GroupRec {
    verifiers: Vec<u32>,
    tasks: usize,
}

#[derive(Clone, Debug)]
struct View {
    chain: ChainState,
    pending: Vec<SecurityDeposit>,
    buffer: Vec<SecurityDeposit>,
    accept_queue: VecDeque<(u64, Digest256, Vec<SecurityDeposit>)>,
    blocks: u64,
    forks: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BlockEvent {
    pub stage: u64,
    pub view: usize,
    pub height: u64,
    pub miner: u32,
    pub canonical: bool,
    pub useful: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SeriesRow {
    pub stage: u64,
    pub provers: u32,
    pub provers_training: u32,
    pub verifiers: u32,
    pub verifiers_verifying: u32,
    pub awaiting: u32,
    pub redundant: u32,
    pub paused: u32,
    pub height: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SimMetrics {
    pub measured_stages: u64,
    pub c_u: u64,
    pub c_r: u64,
    pub c_bv: u64,
    pub c_tv: u64,
    pub idle: u64,
    pub blocks: u64,
    pub forks: u64,
    pub block_interval: f64,
    pub fork_rate: f64,
    pub ubgr: f64,
    pub uwr: f64,
    pub mean_provers: f64,
    pub mean_provers_training: f64,
    pub mean_verifiers: f64,
    pub mean_awaiting: f64,
    pub mean_redundant: f64,
    pub tasks_passed: u64,
    pub tasks_failed: u64,
    pub honest_reward_rate: f64,
    pub strategic_reward_rate: Option<f64>,
    pub honest_tasks: u64,
    pub strategic_tasks: u64,
    pub heights: Vec<u64>,
    pub partition_ok: bool,
    pub bank_conserved: bool,
}

impl SimMetrics {
    fn finish(&mut self) {
        let c = (self.c_u + self.c_r) as f64;
        self.ubgr = if c > 0.0 { self.c_u as f64 / c } else { 0.0 };
        let all = c + (self.c_bv + self.c_tv) as f64;
        self.uwr = if all > 0.0 { self.c_u as f64 / all } else { 0.0 };
        self.block_interval = if self.blocks > 0 { self.measured_stages as f64 / self.blocks as f64 } else { f64::INFINITY };
        self.fork_rate = if self.blocks > 0 { self.forks as f64 / self.blocks as f64 } else { 0.0 };
        let m = self.measured_stages.max(1) as f64;
        self.mean_provers /= m;
        self.mean_provers_training /= m;
        self.mean_verifiers /= m;
        self.mean_awaiting /= m;
        self.mean_redundant /= m;
    }
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub metrics: SimMetrics,
    pub series: Vec<SeriesRow>,
    pub blocks: Vec<BlockEvent>,
}

/// Remaining work for a miner whose stage is interrupted by a block `epochs_done` epochs in:
/// it finishes the stage for task progress but takes no block generation opportunity for it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InterruptedStage {
    pub remaining_epochs: u32,
    pub bgo: bool,
}

pub fn on_block_mid_stage(epochs_done: u32, tau: u32) -> InterruptedStage {
    InterruptedStage { remaining_epochs: tau.saturating_sub(epochs_done), bgo: epochs_done == 0 }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    miner: u32,
    useful: Option<(u64, u32)>,
}

enum Event {
    TaskDone(u64),
    Report { task: u64, report: VerifierReport, started: u64 },
    JobDone(u32),
    Submit(u32),
}

pub struct World {
    cfg: SimConfig,
    t: u64,
    rng: ChaCha8Rng,
    vrng: SplitMix64,
    threshold: Threshold,
    miners: Vec<Miner>,
    views: Vec<View>,
    tasks: Slab<TaskRec>,
    groups: Slab<GroupRec>,
    deposits: HashMap<Digest256, SecurityDeposit>,
    refunds: Vec<Digest256>,
    bank: Bank,
    next_id: u64,
    arrival: u64,
    cands: Vec<Vec<Candidate>>,
    events: Vec<Event>,
    metrics: SimMetrics,
    series: Vec<SeriesRow>,
    block_log: Vec<BlockEvent>,
}

impl World {
    pub fn new(cfg: SimConfig) -> Result<Self, ConfigErrors> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let vrng = SplitMix64::new(rng.random());
        let n = cfg.n;
        let (adv_count, strategy) = match cfg.adversary {
            Some(a) => (((a.fraction * n as f64).round() as usize).min(n), Some(a.strategy)),
            None => (0, None),
        };
        let mut is_adv = vec![false; n];
        for i in index::sample(&mut rng, n, adv_count) {
            is_adv[i] = true;
        }
        let views = if strategy == Some(Strategy::PrivateFork) { 2 } else { 1 };
        let mut bank = Bank::new();
        let mut miners = Vec::with_capacity(n);
        let mut deposits = HashMap::new();
        let mut entries = Vec::with_capacity(n);
        let mut initial = vec![Vec::new(); views];
        for (i, adv) in is_adv.iter().enumerate() {
            let view = usize::from(*adv && views == 2);
            let sd = SecurityDeposit::new(i as u64, 0, cfg.deposit).expect("deposit validated");
            bank.mint(Account::Miner(i as u64), 10 * cfg.deposit);
            bank.transfer(Account::Miner(i as u64), Account::Deposit(sd.sd_id), cfg.deposit).expect("funded");
            entries.push(LedgerEntry::Deposit { sd_id: sd.sd_id, owner: i as u64, amount: sd.amount });
            miners.push(Miner {
                role: Role::Awaiting,
                view,
                pause_left: 0,
                bv_owed: 0,
                has_weights: false,
                dishonest: *adv && strategy == Some(Strategy::Dishonest),
                nonce: 1,
                current_sd: sd.sd_id,
                prover_time: 0,
                task_reward: 0,
            });
            initial[view].push(sd.clone());
            deposits.insert(sd.sd_id, sd);
        }
        let params = ProtocolParams { p: cfg.p, g: cfg.g as u32, g_v: cfg.g_v as u32, xi: cfg.xi };
        let g = genesis(params, entries);
        let views_v = (0..views)
            .map(|_| View {
                chain: ChainState::new(g.clone()),
                pending: Vec::new(),
                buffer: Vec::new(),
                accept_queue: VecDeque::new(),
                blocks: 0,
                forks: 0,
            })
            .collect();
        let threshold = Threshold::new(cfg.p).expect("p validated");
        let mut w = World {
            threshold,
            t: 0,
            rng,
            vrng,
            miners,
            views: views_v,
            tasks: Slab::default(),
            groups: Slab::default(),
            deposits,
            refunds: Vec::new(),
            bank,
            next_id: 0,
            arrival: 0,
            cands: vec![Vec::new(); views],
            events: Vec::new(),
            metrics: SimMetrics { partition_ok: true, ..Default::default() },
            series: Vec::new(),
            block_log: Vec::new(),
            cfg,
        };
        let gsum = w.views[0].chain.genesis_summary();
        for (v, sds) in initial.into_iter().enumerate() {
            for sd in &sds {
                w.deposits.get_mut(&sd.sd_id).expect("known").record(0).expect("pending");
            }
            w.group_deposits(v, sds, gsum, 0);
        }
        Ok(w)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn stage(&self) -> u64 {
        self.t
    }

    pub fn chain(&self, view: usize) -> &ChainState {
        &self.views[view].chain
    }

    pub fn bank(&self) -> &Bank {
        &self.bank
    }

    pub fn metrics(&self) -> &SimMetrics {
        &self.metrics
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn measuring(&self) -> bool {
        self.t > self.cfg.warmup
    }

    /// Group freshly recorded deposits (plus the buffer) under `summary` and start the new groups.
    fn group_deposits(&mut self, view: usize, sds: Vec<SecurityDeposit>, summary: Digest256, height: u64) {
        let buffer = std::mem::take(&mut self.views[view].buffer);
        let (groups, rest) = form_groups(sds, buffer, &summary, height, self.cfg.g, self.cfg.g_v).expect("g_v < g validated");
        self.views[view].buffer = rest;
        let (lo, hi) = self.cfg.stage_range();
        for grp in groups {
            // Infinite task supply: top the pool up to exactly the provers that need tasks.
            let mut pool = TaskPool::new();
            for _ in 0..grp.provers().len() {
                let id = self.fresh_id();
                let stages = self.rng.random_range(lo..=hi);
                pool.insert(TaskContract {
                    task_id: hash_parts(&[b"task", &id.to_be_bytes()]),
                    reward: u64::from(stages),
                    stages,
                    spec_summary: Digest256::ZERO,
                });
            }
            let asg = assign_tasks(grp.provers(), &mut pool, &summary);
            debug_assert!(asg.waiting.is_empty());
            let verifiers: Vec<u32> = grp.verifiers().iter().map(|sd| sd.owner as u32).collect();
            let gid = self.groups.insert(GroupRec { verifiers: verifiers.clone(), tasks: asg.pairs.len() });
            for v in verifiers {
                self.start_download(v, After::Verifier(gid));
            }
            for (sd, sc) in asg.pairs {
                let prover = sd.owner as u32;
                let rec = self.new_task(prover, gid, &sd, &sc);
                let tid = self.tasks.insert(rec);
                self.start_download(prover, After::Prover(tid));
            }
        }
    }

    fn new_task(&mut self, prover: u32, gid: u64, sd: &SecurityDeposit, sc: &TaskContract) -> TaskRec {
        let s = sc.stages;
        let cfg = &self.cfg;
        let dishonest = self.miners[prover as usize].dishonest;
        let plan = dishonest.then(|| {
            let rho = cfg.adversary.map_or(1.0, |a| a.rho);
            let honest = ((rho * f64::from(s)).round() as usize).min(s as usize);
            let mut plan = vec![false; s as usize];
            for i in index::sample(&mut self.rng, s as usize, honest) {
                plan[i] = true;
            }
            plan
        });
        let flags = cfg.ctf.then(|| {
            let mut f = sample_flags(s, cfg.xi, Seed(self.rng.random())).expect("xi validated").flags;
            if let Some(p) = &plan {
                // A cheater claims non-zero flags on skipped stages: the best it can do against capture.
                for (fl, honest) in f.iter_mut().zip(p) {
                    if !honest {
                        *fl = if self.rng.random::<bool>() { 1 } else { 2 };
                    }
                }
            }
            f
        });
        let terms = TaskTerms {
            task_id: sc.task_id,
            requester: REQUESTER,
            prover_sd: sd.sd_id,
            reward: sc.reward,
            verify_reward: u64::from(cfg.alpha),
            flag_reward: u64::from(cfg.ctf),
            verifiers: cfg.g_v as u32,
            alpha: cfg.alpha,
            gamma: cfg.gamma,
        };
        self.bank.mint(Account::Requester(REQUESTER), terms.escrow());
        self.bank.fund_task(&terms).expect("requester funded");
        TaskRec {
            id: sc.task_id,
            prover,
            group: gid,
            stages: s,
            done: 0,
            skip_debt: 0.0,
            sd: sd.sd_id,
            plan,
            flags,
            block_stages: BTreeSet::new(),
            reports: Vec::new(),
            terms,
        }
    }

    fn start_download(&mut self, miner: u32, then: After) {
        let m = &mut self.miners[miner as usize];
        debug_assert!(matches!(m.role, Role::Awaiting));
        let left = self.cfg.latency.dataset_download;
        m.role = if left == 0 { Self::role_after(then) } else { Role::Downloading { left, then } };
    }

    fn role_after(then: After) -> Role {
        match then {
            After::Prover(task) => Role::Prover { task },
            After::Verifier(group) => Role::Verifier { group, queue: VecDeque::new(), busy: None, verified: 0 },
        }
    }

    /// Verifier work for one stage: continue a recomputation or start the next queued task.
    fn verifier_work(
        tasks: &Slab<TaskRec>,
        cfg: &SimConfig,
        vrng: &mut SplitMix64,
        me: u32,
        queue: &mut VecDeque<(u64, u64)>,
        busy: &mut Option<Busy>,
        t: u64,
        events: &mut Vec<Event>,
    ) -> bool {
        if busy.is_none() {
            if let Some(&(task, ready)) = queue.front() {
                if ready <= t {
                    queue.pop_front();
                    let rec = &tasks[task];
                    let report = verifier_pass(rec, u64::from(me), rec.stages, cfg.alpha as usize, &rec.block_stages, cfg.ctf, vrng)
                        .expect("alpha below task length");
                    let left = report.recomputations() as u32 * cfg.latency.verify_stage_cost;
                    *busy = Some(Busy { task, left, report, started: t });
                }
            }
        }
        let Some(b) = busy.as_mut() else {
            return false;
        };
        b.left -= 1;
        if b.left == 0 {
            let b = busy.take().expect("present");
            events.push(Event::Report { task: b.task, report: b.report, started: b.started });
        }
        true
    }

    /// Advance one miner by one stage; returns what the stage was spent on.
    fn advance(&mut self, i: usize) -> Activity {
        let t = self.t;
        let cfg = &self.cfg;
        let m = &mut self.miners[i];
        let paused = m.pause_left > 0;
        let mut bv = false;
        if paused {
            m.pause_left -= 1;
            if m.bv_owed > 0 {
                m.bv_owed -= 1;
                bv = true;
            }
        }
        if self.t > cfg.warmup && !matches!(m.role, Role::Verifier { .. } | Role::Downloading { then: After::Verifier(_), .. }) {
            m.prover_time += 1;
        }
        let view = m.view;
        match &mut m.role {
            Role::Downloading { left, then } => {
                *left -= 1;
                if *left == 0 {
                    m.role = Self::role_after(*then);
                }
                if bv {
                    Activity::BlockVerify
                } else {
                    Activity::Idle
                }
            }
            _ if bv => Activity::BlockVerify,
            Role::Verifier { queue, busy, .. } => {
                if Self::verifier_work(&self.tasks, cfg, &mut self.vrng, i as u32, queue, busy, t, &mut self.events) {
                    Activity::TaskVerify
                } else if !paused && cfg.verifier_redundant && m.has_weights {
                    self.cands[view].push(Candidate { miner: i as u32, useful: None });
                    Activity::Redundant
                } else {
                    Activity::Idle
                }
            }
            _ if paused => Activity::Idle,
            Role::Awaiting => {
                if m.has_weights {
                    self.cands[view].push(Candidate { miner: i as u32, useful: None });
                    Activity::Redundant
                } else {
                    Activity::Idle
                }
            }
            Role::Prover { task } => {
                let tid = *task;
                let rec = self.tasks.get_mut(tid).expect("live task");
                // Skipped stages cost `skip_cost` of a stage each, without a BGO.
                let skip_cost = cfg.adversary.map_or(0.0, |a| a.skip_cost);
                while rec.done < rec.stages && !rec.honest(rec.done + 1) && rec.skip_debt < 1.0 {
                    rec.done += 1;
                    rec.skip_debt += skip_cost;
                }
                if rec.skip_debt >= 1.0 {
                    rec.skip_debt -= 1.0;
                    return Activity::Idle;
                }
                if rec.done == rec.stages {
                    m.role = Role::Awaiting;
                    m.has_weights = true;
                    self.events.push(Event::TaskDone(tid));
                    self.events.push(Event::Submit(i as u32));
                    return Activity::Idle;
                }
                rec.done += 1;
                self.cands[view].push(Candidate { miner: i as u32, useful: Some((tid, rec.done)) });
                if rec.done == rec.stages {
                    m.role = Role::Awaiting;
                    m.has_weights = true;
                    self.events.push(Event::TaskDone(tid));
                    self.events.push(Event::Submit(i as u32));
                }
                Activity::Useful
            }
        }
    }

    /// Security deposit for a miner that just finished its role; it enters the next block's ledger.
    fn submit_deposit(&mut self, miner: u32) {
        let m = &mut self.miners[miner as usize];
        let sd = SecurityDeposit::new(u64::from(miner), m.nonce, self.cfg.deposit).expect("deposit validated");
        m.nonce += 1;
        m.current_sd = sd.sd_id;
        let acct = Account::Miner(u64::from(miner));
        let have = self.bank.balance(&acct);
        if have < sd.amount {
            // Outside top-up so a heavily penalized miner can keep participating.
            self.bank.mint(acct, sd.amount - have);
        }
        self.bank.transfer(acct, Account::Deposit(sd.sd_id), sd.amount).expect("funded");
        let view = m.view;
        self.views[view].pending.push(sd.clone());
        self.deposits.insert(sd.sd_id, sd);
    }

    fn process_events(&mut self) {
        let events = std::mem::take(&mut self.events);
        for e in events {
            match e {
                Event::Submit(m) => self.submit_deposit(m),
                Event::TaskDone(tid) => {
                    let gid = self.tasks[tid].group;
                    let ready = self.t + u64::from(self.cfg.latency.weight_transfer);
                    for v in self.groups[gid].verifiers.clone() {
                        if let Role::Verifier { queue, .. } = &mut self.miners[v as usize].role {
                            queue.push_back((tid, ready));
                        }
                    }
                }
                Event::Report { task, report, started } => {
                    let v = report.verifier as u32;
                    let rec = self.tasks.get_mut(task).expect("live task");
                    rec.reports.push((report, self.t, started));
                    let complete = rec.reports.len() == self.cfg.g_v;
                    let gid = rec.group;
                    if let Role::Verifier { verified, .. } = &mut self.miners[v as usize].role {
                        *verified += 1;
                        if *verified == self.groups[gid].tasks {
                            self.events.push(Event::JobDone(v));
                        }
                    }
                    if complete {
                        self.finalize(task);
                    }
                }
                Event::JobDone(v) => {
                    let m = &mut self.miners[v as usize];
                    if let Role::Verifier { group, .. } = m.role {
                        m.role = Role::Awaiting;
                        let old = m.current_sd;
                        self.refunds.push(old);
                        self.submit_deposit(v);
                        let g = self.groups.get_mut(group).expect("live group");
                        g.verifiers.retain(|x| *x != v);
                        if g.verifiers.is_empty() {
                            self.groups.remove(group);
                        }
                    }
                }
            }
        }
        if !self.events.is_empty() {
            self.process_events();
        }
    }

    fn finalize(&mut self, task: u64) {
        let rec = self.tasks.remove(task).expect("live task");
        let timeout = self.cfg.verifier_timeout;
        let reports: Vec<Option<VerifierReport>> =
            rec.reports.iter().map(|(r, at, started)| (at - started <= timeout).then(|| r.clone())).collect();
        let ctf = rec.flags.as_ref().map(|f| (Some(f.as_slice()), flag_commitment(f)));
        let contract = finalize_task(rec.id, u64::from(rec.prover), &reports, ctf, &rec).expect("consistent task");
        let s = self.bank.settle(&contract, &rec.terms).expect("escrow covers settlement");
        let measuring = self.measuring();
        let m = &mut self.miners[rec.prover as usize];
        if contract.passed {
            self.refunds.push(rec.sd);
            if measuring {
                m.task_reward += rec.terms.reward as i64;
                self.metrics.tasks_passed += 1;
            }
        } else {
            if let Some(sd) = self.deposits.get_mut(&rec.sd) {
                let _ = sd.forfeit();
            }
            self.deposits.remove(&rec.sd);
            if measuring {
                m.task_reward -= s.penalty as i64;
                self.metrics.tasks_failed += 1;
            }
        }
        if measuring {
            if m.dishonest {
                self.metrics.strategic_tasks += 1;
            } else {
                self.metrics.honest_tasks += 1;
            }
        }
    }

    fn process_refunds(&mut self) {
        let window = self.cfg.refund_window;
        let mut keep = Vec::new();
        for id in std::mem::take(&mut self.refunds) {
            let Some(sd) = self.deposits.get_mut(&id) else { continue };
            let height = self.views[self.miners[sd.owner as usize].view].chain.height();
            match sd.claim_refund(height, window) {
                Ok(amount) => {
                    let owner = sd.owner;
                    self.deposits.remove(&id);
                    self.bank.transfer(Account::Deposit(id), Account::Miner(owner), amount).expect("locked deposit");
                }
                Err(crate::roles::RoleError::RefundTooEarly(_)) => keep.push(id),
                Err(_) => {}
            }
        }
        self.refunds = keep;
    }

    /// Decide the stage's block finds for one view.
    fn draw_winners(&mut self, view: usize, cutoff: usize) -> Vec<(Candidate, Block)> {
        let cands = std::mem::take(&mut self.cands[view]);
        if cands.is_empty() {
            return Vec::new();
        }
        let picked = match self.cfg.bgo_mode {
            BgoMode::CoinToss => {
                let k = Binomial::new(cands.len() as u64, self.cfg.p).expect("p validated").sample(&mut self.rng) as usize;
                if k == 0 {
                    return Vec::new();
                }
                Some(index::sample(&mut self.rng, cands.len(), k))
            }
            BgoMode::Hash => None,
        };
        let parent = self.views[view].chain.tip_block().clone();
        let ledger = Ledger::new(
            self.views[view].pending[..cutoff]
                .iter()
                .map(|sd| LedgerEntry::Deposit { sd_id: sd.sd_id, owner: sd.owner, amount: sd.amount })
                .collect(),
        )
        .to_bytes();
        let template = |w: &World, c: &Candidate| {
            let m = &w.miners[c.miner as usize];
            let (stage, flag) = match c.useful {
                Some((tid, s)) => (s, w.tasks[tid].flags.as_ref().map(|f| f[s as usize - 1])),
                None => (1, w.cfg.ctf.then_some(0)),
            };
            let work = hash_parts(&[b"w", &c.miner.to_be_bytes(), &w.t.to_be_bytes()]);
            make_template(&parent, m.current_sd, ledger.clone(), work, stage, flag)
        };
        match picked {
            Some(idx) => idx.into_iter().map(|j| (cands[j], template(self, &cands[j]))).collect(),
            None => {
                let mut found: Vec<(Candidate, Block)> = Vec::new();
                for c in &cands {
                    let b = template(self, c);
                    let seed = b.effective_seed().expect("stage >= 1");
                    let result = surrogate_stage(&b.work_summary, seed, self.cfg.tau, 1);
                    if check_bgo(&result, &b.prev_summary, &self.threshold) {
                        found.push((*c, b));
                    }
                }
                // Random network arrival order.
                let order = index::sample(&mut self.rng, found.len(), found.len());
                order.into_iter().map(|j| found[j].clone()).collect()
            }
        }
    }

    /// Insert the stage's finds (first = winner), pause the rest of the view, record deposits.
    fn on_blocks(&mut self, view: usize, found: Vec<(Candidate, Block)>, cutoff: usize) {
        let measuring = self.measuring();
        let t = self.t;
        let winner = found[0].0;
        for (k, (c, b)) in found.iter().enumerate() {
            self.arrival += 1;
            let outcome = self.views[view].chain.accept_block(b.clone(), self.arrival);
            let canonical = k == 0;
            debug_assert!(canonical == matches!(outcome, AcceptOutcome::Inserted { fork: false, .. }));
            self.block_log.push(BlockEvent { stage: t, view, height: b.height, miner: c.miner, canonical, useful: c.useful.is_some() });
            if measuring {
                if canonical {
                    self.views[view].blocks += 1;
                    self.metrics.blocks += 1;
                } else {
                    self.views[view].forks += 1;
                    self.metrics.forks += 1;
                    if c.useful.is_some() {
                        // Work behind an orphaned block does not end up in the final chain.
                        self.metrics.c_u -= 1;
                        self.metrics.c_r += 1;
                    }
                }
            }
        }
        let block = &found[0].1;
        let reward = self.cfg.block_reward;
        self.bank.mint(Account::BlockPool, reward);
        let mut committee: &[u32] = &[];
        match winner.useful {
            Some((tid, s)) => {
                let rec = self.tasks.get_mut(tid).expect("live task");
                rec.block_stages.insert(s);
                self.bank.withhold_block_reward(rec.id, reward).expect("pool funded");
                if let Some(g) = self.groups.get(rec.group) {
                    committee = &g.verifiers;
                }
            }
            None => {
                self.bank.transfer(Account::BlockPool, Account::Miner(u64::from(winner.miner)), reward).expect("pool funded");
            }
        }
        let lat = self.cfg.latency;
        let committee: Vec<u32> = committee.to_vec();
        for (i, m) in self.miners.iter_mut().enumerate() {
            if m.view != view || i as u32 == winner.miner {
                continue;
            }
            let l = if committee.contains(&(i as u32)) { lat.committee_block_verify } else { lat.network_block_verify };
            m.bv_owed += 1;
            m.pause_left = m.pause_left.max(l).max(m.bv_owed);
        }
        let v = &mut self.views[view];
        let recorded: Vec<SecurityDeposit> = v.pending.drain(..cutoff).collect();
        let height = block.height;
        for sd in &recorded {
            if let Some(d) = self.deposits.get_mut(&sd.sd_id) {
                let _ = d.record(height);
            }
        }
        v.accept_queue.push_back((t + u64::from(lat.network_block_verify), block.summary(), recorded));
    }

    fn process_acceptances(&mut self, view: usize) {
        while let Some((at, _, _)) = self.views[view].accept_queue.front() {
            if *at > self.t {
                break;
            }
            let (_, summary, sds) = self.views[view].accept_queue.pop_front().expect("front exists");
            let height = self.views[view].chain.get(&summary).map_or(0, |b| b.height);
            self.group_deposits(view, sds, summary, height);
        }
    }

    /// One synchronized stage.
    pub fn step(&mut self) {
        self.t += 1;
        let measuring = self.measuring();
        let cutoffs: Vec<usize> = self.views.iter().map(|v| v.pending.len()).collect();
        let mut counts = [0u64; 5];
        let mut row = SeriesRow { stage: self.t, ..Default::default() };
        for i in 0..self.miners.len() {
            let a = self.advance(i);
            counts[a as usize] += 1;
            let m = &self.miners[i];
            match &m.role {
                Role::Prover { .. } | Role::Downloading { then: After::Prover(_), .. } => row.provers += 1,
                Role::Verifier { busy, .. } => {
                    row.verifiers += 1;
                    row.verifiers_verifying += u32::from(busy.is_some() || a == Activity::TaskVerify);
                }
                Role::Downloading { then: After::Verifier(_), .. } => row.verifiers += 1,
                Role::Awaiting => row.awaiting += 1,
            }
            row.provers_training += u32::from(a == Activity::Useful);
            row.redundant += u32::from(a == Activity::Redundant);
            row.paused += u32::from(m.pause_left > 0);
        }
        if counts.iter().sum::<u64>() != self.miners.len() as u64 {
            self.metrics.partition_ok = false;
        }
        if measuring {
            let mt = &mut self.metrics;
            mt.measured_stages += 1;
            mt.c_u += counts[Activity::Useful as usize];
            mt.c_r += counts[Activity::Redundant as usize];
            mt.c_bv += counts[Activity::BlockVerify as usize];
            mt.c_tv += counts[Activity::TaskVerify as usize];
            mt.idle += counts[Activity::Idle as usize];
            mt.mean_provers += f64::from(row.provers);
            mt.mean_provers_training += f64::from(row.provers_training);
            mt.mean_verifiers += f64::from(row.verifiers);
            mt.mean_awaiting += f64::from(row.awaiting);
            mt.mean_redundant += f64::from(row.redundant);
        }
        self.process_events();
        for v in 0..self.views.len() {
            let found = self.draw_winners(v, cutoffs[v]);
            if !found.is_empty() {
                self.on_blocks(v, found, cutoffs[v]);
            }
            self.process_acceptances(v);
        }
        self.process_refunds();
        if self.cfg.series_every > 0 && self.t % self.cfg.series_every == 0 {
            row.height = self.views[0].chain.height();
            self.series.push(row);
        }
    }

    /// Run to the horizon and summarize.
    pub fn run_to_end(mut self) -> (SimOutput, World) {
        while self.t < self.cfg.horizon {
            self.step();
        }
        let out = self.summarize();
        (out, self)
    }

    pub fn summarize(&self) -> SimOutput {
        let mut m = self.metrics.clone();
        m.heights = self.views.iter().map(|v| v.chain.height()).collect();
        m.bank_conserved = self.bank.conserved();
        let rate = |dishonest: bool| {
            let (r, t) = self
                .miners
                .iter()
                .filter(|x| x.dishonest == dishonest)
                .fold((0i64, 0u64), |(r, t), x| (r + x.task_reward, t + x.prover_time));
            (t > 0).then(|| r as f64 / t as f64)
        };
        m.honest_reward_rate = rate(false).unwrap_or(0.0);
        m.strategic_reward_rate = if self.miners.iter().any(|x| x.dishonest) { rate(true) } else { None };
        m.finish();
        SimOutput { metrics: m, series: self.series.clone(), blocks: self.block_log.clone() }
    }

    /// Publish every view's chain to the first one's node and report whether the first view's tip stays canonical.
    pub fn honest_chain_prevails(&self) -> bool {
        let mut merged = self.views[0].chain.clone();
        let honest_tip = merged.canonical_tip();
        let mut stamp = u64::MAX / 2;
        for v in &self.views[1..] {
            for b in v.chain.canonical_chain() {
                stamp += 1;
                merged.accept_block(b.clone(), stamp);
            }
        }
        merged.canonical_tip() == honest_tip
    }
}

/// Build, run and summarize one configuration.
pub fn run(cfg: &SimConfig) -> Result<SimOutput, ConfigErrors> {
    Ok(World::new(cfg.clone())?.run_to_end().0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: u32,
    pub gamma: f64,
    pub rho: f64,
    pub strategic_rate: f64,
    pub honest_rate: f64,
    pub strategic_tasks: u64,
    pub tasks_failed: u64,
}

/// Reward rate of a small set of strategic provers for every `(alpha, gamma)` and honest ratio.
///
/// Every point reuses the base seed, so differences between points are not drowned in replica noise.
pub fn run_dishonesty_sweep(
    base: &SimConfig,
    fraction: f64,
    rho_grid: &[f64],
    combos: &[(u32, f64)],
) -> Result<Vec<SweepRow>, ConfigErrors> {
    let mut rows = Vec::new();
    for &(alpha, gamma) in combos {
        for &rho in rho_grid {
            let mut cfg = base.clone();
            cfg.ctf = true;
            cfg.alpha = alpha;
            cfg.gamma = gamma;
            cfg.adversary = Some(Adversary { fraction, rho, strategy: Strategy::Dishonest, skip_cost: base.adversary.map_or(0.0, |a| a.skip_cost) });
            let out = run(&cfg)?;
            let m = out.metrics;
            rows.push(SweepRow {
                alpha,
                gamma,
                rho,
                strategic_rate: m.strategic_reward_rate.unwrap_or(0.0),
                honest_rate: m.honest_reward_rate,
                strategic_tasks: m.strategic_tasks,
                tasks_failed: m.tasks_failed,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            n: 50,
            g: 10,
            g_v: 2,
            p: 0.01,
            mean_epochs: 80,
            alpha: 2,
            horizon: 3000,
            warmup: 500,
            series_every: 10,
            ..Default::default()
        }
    }

    #[test]
    fn mid_stage_block_forgoes_bgo() {
        assert_eq!(on_block_mid_stage(2, 4), InterruptedStage { remaining_epochs: 2, bgo: false });
    }

    #[test]
    fn all_downloading_means_no_tosses() {
        let mut w = World::new(small()).unwrap();
        w.step();
        assert!(w.miners.iter().all(|m| matches!(m.role, Role::Downloading { .. })));
        assert_eq!(w.block_log.len(), 0);
    }

    #[test]
    fn certain_bgo_blocks_on_first_trained_stage() {
        let cfg = SimConfig { p: 1.0, ..small() };
        let mut w = World::new(cfg).unwrap();
        w.step();
        w.step();
        assert!(w.block_log.is_empty());
        w.step();
        assert!(!w.block_log.is_empty());
        assert_eq!(w.block_log.iter().filter(|b| b.canonical).count(), 1);
    }

    #[test]
    fn committee_pauses_shorter_than_network() {
        let cfg = SimConfig { p: 1.0, ..small() };
        let mut w = World::new(cfg).unwrap();
        for _ in 0..3 {
            w.step();
        }
        let first = w.block_log[0];
        let committee = match w.miners[first.miner as usize].role {
            Role::Prover { task } => w.groups[w.tasks[task].group].verifiers.clone(),
            _ => panic!("winner should still be proving"),
        };
        for (i, m) in w.miners.iter().enumerate() {
            if i as u32 == first.miner {
                assert_eq!(m.pause_left, 0);
            } else if committee.contains(&(i as u32)) {
                assert_eq!(m.pause_left, 2);
            } else {
                assert_eq!(m.pause_left, 4);
            }
        }
    }

    #[test]
    fn skip_cost_slows_cheaters() {
        let adv = |skip_cost| Adversary { fraction: 0.2, rho: 0.0, strategy: Strategy::Dishonest, skip_cost };
        let free = run(&SimConfig { adversary: Some(adv(0.0)), ctf: true, ..small() }).unwrap().metrics;
        let costly = run(&SimConfig { adversary: Some(adv(1.0)), ctf: true, ..small() }).unwrap().metrics;
        assert!(costly.strategic_tasks < free.strategic_tasks);
    }

    #[test]
    fn accounting_partition_and_bounds() {
        let out = run(&small()).unwrap();
        let m = &out.metrics;
        assert!(m.partition_ok);
        assert!(m.bank_conserved);
        assert_eq!(m.c_u + m.c_r + m.c_bv + m.c_tv + m.idle, m.measured_stages * 50);
        assert!((0.0..=1.0).contains(&m.uwr) && m.ubgr >= m.uwr);
        assert!(m.blocks > 0 && m.tasks_passed > 0);
    }

    #[test]
    fn hash_mode_runs() {
        let cfg = SimConfig { bgo_mode: BgoMode::Hash, horizon: 1500, ..small() };
        let m = run(&cfg).unwrap().metrics;
        assert!(m.blocks > 0);
        assert!(m.partition_ok);
    }
}

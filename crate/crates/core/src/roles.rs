//! Security deposits, group appointment and task assignment.
//!
//! Ranks are hashes of a block summary and the serialized object, so nobody
//! can know the ordering before the block exists. Ties (cryptographically
//! negligible) break on the object id so the sort is total.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Writer;
use crate::hashcore::{hash_parts, Digest256};

pub const DEFAULT_DEPOSIT: u64 = 100;
pub const DEFAULT_REFUND_WINDOW: u64 = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RoleError {
    #[error("deposit amount must be positive")]
    ZeroDeposit,
    #[error("deposit is {0:?}, expected {1:?}")]
    WrongStatus(DepositStatus, DepositStatus),
    #[error("refund not available before height {0}")]
    RefundTooEarly(u64),
    #[error("forfeited deposits are never refunded")]
    Forfeited,
    #[error("need g_v < g, got g = {g}, g_v = {g_v}")]
    GroupShape { g: usize, g_v: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepositStatus {
    Pending,
    Active,
    RefundClaimed,
    Forfeited,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityDeposit {
    pub sd_id: Digest256,
    pub owner: u64,
    pub amount: u64,
    pub recorded_height: Option<u64>,
    pub status: DepositStatus,
}

impl SecurityDeposit {
    /// A fresh pending deposit; `nonce` distinguishes successive deposits of one miner.
    pub fn new(owner: u64, nonce: u64, amount: u64) -> Result<Self, RoleError> {
        if amount == 0 {
            return Err(RoleError::ZeroDeposit);
        }
        let sd_id = hash_parts(&[b"sd", &owner.to_be_bytes(), &nonce.to_be_bytes()]);
        Ok(SecurityDeposit { sd_id, owner, amount, recorded_height: None, status: DepositStatus::Pending })
    }

    /// Bytes that enter the rank hash: only the immutable fields.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.digest(&self.sd_id).u64(self.owner).u64(self.amount);
        w.finish()
    }

    pub fn record(&mut self, height: u64) -> Result<(), RoleError> {
        if self.status != DepositStatus::Pending {
            return Err(RoleError::WrongStatus(self.status, DepositStatus::Pending));
        }
        self.recorded_height = Some(height);
        self.status = DepositStatus::Active;
        Ok(())
    }

    pub fn claim_refund(&mut self, current_height: u64, window: u64) -> Result<u64, RoleError> {
        match self.status {
            DepositStatus::Forfeited => return Err(RoleError::Forfeited),
            DepositStatus::Active => {}
            s => return Err(RoleError::WrongStatus(s, DepositStatus::Active)),
        }
        let due = self.recorded_height.unwrap_or(0) + window;
        if current_height < due {
            return Err(RoleError::RefundTooEarly(due));
        }
        self.status = DepositStatus::RefundClaimed;
        Ok(self.amount)
    }

    pub fn forfeit(&mut self) -> Result<(), RoleError> {
        if self.status == DepositStatus::RefundClaimed {
            return Err(RoleError::WrongStatus(self.status, DepositStatus::Active));
        }
        self.status = DepositStatus::Forfeited;
        Ok(())
    }
}

/// `h_SD = hash(block_summary || sd)`.
pub fn rank_deposit(block_summary: &Digest256, sd: &SecurityDeposit) -> Digest256 {
    hash_parts(&[block_summary.as_bytes(), &sd.to_bytes()])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    /// All members in ascending rank order.
    pub members: Vec<SecurityDeposit>,
    pub g_v: usize,
    pub formed_at_height: u64,
}

impl Group {
    pub fn verifiers(&self) -> &[SecurityDeposit] {
        &self.members[..self.g_v]
    }

    /// Provers, still in ascending rank order.
    pub fn provers(&self) -> &[SecurityDeposit] {
        &self.members[self.g_v..]
    }
}

fn sort_by_rank<T>(items: &mut Vec<T>, rank: impl Fn(&T) -> Digest256, id: impl Fn(&T) -> Digest256) {
    let mut keyed: Vec<(Digest256, Digest256, T)> = items.drain(..).map(|t| (rank(&t), id(&t), t)).collect();
    keyed.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    items.extend(keyed.into_iter().map(|(_, _, t)| t));
}

/// Rank buffer plus new deposits under `block_summary` and cut consecutive groups of `g`.
pub fn form_groups(
    new_deposits: Vec<SecurityDeposit>,
    buffer: Vec<SecurityDeposit>,
    block_summary: &Digest256,
    height: u64,
    g: usize,
    g_v: usize,
) -> Result<(Vec<Group>, Vec<SecurityDeposit>), RoleError> {
    if g_v >= g {
        return Err(RoleError::GroupShape { g, g_v });
    }
    let mut all = buffer;
    all.extend(new_deposits);
    sort_by_rank(&mut all, |sd| rank_deposit(block_summary, sd), |sd| sd.sd_id);
    let full = all.len() / g * g;
    let rest = all.split_off(full);
    let groups = all
        .chunks_exact(g)
        .map(|c| Group { members: c.to_vec(), g_v, formed_at_height: height })
        .collect();
    Ok((groups, rest))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskContract {
    pub task_id: Digest256,
    pub reward: u64,
    pub stages: u32,
    pub spec_summary: Digest256,
}

impl TaskContract {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.digest(&self.task_id).u64(self.reward).u32(self.stages).digest(&self.spec_summary);
        w.finish()
    }
}

/// `h_SC = hash(block_summary || sc)`.
pub fn rank_task(block_summary: &Digest256, sc: &TaskContract) -> Digest256 {
    hash_parts(&[block_summary.as_bytes(), &sc.to_bytes()])
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TaskPool {
    unassigned: Vec<TaskContract>,
}

impl TaskPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sc: TaskContract) -> bool {
        if self.unassigned.iter().any(|t| t.task_id == sc.task_id) {
            return false;
        }
        self.unassigned.push(sc);
        true
    }

    pub fn len(&self) -> usize {
        self.unassigned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unassigned.is_empty()
    }

    pub fn tasks(&self) -> &[TaskContract] {
        &self.unassigned
    }

    /// Pool order under a block summary.
    pub fn ranked(&self, block_summary: &Digest256) -> Vec<TaskContract> {
        let mut v = self.unassigned.clone();
        sort_by_rank(&mut v, |t| rank_task(block_summary, t), |t| t.task_id);
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub pairs: Vec<(SecurityDeposit, TaskContract)>,
    pub waiting: Vec<SecurityDeposit>,
}

/// Zip provers (already in ascending `h_SD` order) with the pool in `h_SC` order; assigned tasks leave the pool.
pub fn assign_tasks(provers_sorted: &[SecurityDeposit], pool: &mut TaskPool, block_summary: &Digest256) -> Assignment {
    let ranked = pool.ranked(block_summary);
    let k = provers_sorted.len().min(ranked.len());
    let pairs: Vec<_> = provers_sorted[..k].iter().cloned().zip(ranked.into_iter().take(k)).collect();
    pool.unassigned.retain(|t| !pairs.iter().any(|(_, p)| p.task_id == t.task_id));
    Assignment { pairs, waiting: provers_sorted[k..].to_vec() }
}

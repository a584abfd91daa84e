//! Blocks, two-phase block verification and longest-chain state.
//!
//! Serialization (all integers big-endian):
//!
//! ```text
//! prev_summary  32 bytes
//! sd_id         32 bytes
//! ledger        u64 length + bytes
//! work_summary  32 bytes
//! stage         u32
//! flag          u8 presence (0/1), then u8 flag if present
//! height        u64
//! ```
//!
//! A block's summary is `hash(serialize(block))`; stage seeds derive from it.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::hashcore::{derive_ctf_seed, derive_seed, hash, hash_parts, meets_threshold, Digest256, HashError, Seed, Threshold};
use crate::ledger::{Ledger, LedgerEntry, ProtocolParams};
use crate::proofs::ProofPackage;
use crate::usefulwork::UsefulWork;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("parent {0} is not a known block")]
    UnknownParent(Digest256),
    #[error("broken linkage at height {height}: {reason}")]
    Linkage { height: u64, reason: String },
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Block {
    pub prev_summary: Digest256,
    pub sd_id: Digest256,
    pub ledger: Vec<u8>,
    pub work_summary: Digest256,
    pub stage: u32,
    pub flag: Option<u8>,
    pub height: u64,
}

impl Block {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.digest(&self.prev_summary)
            .digest(&self.sd_id)
            .bytes(&self.ledger)
            .digest(&self.work_summary)
            .u32(self.stage);
        match self.flag {
            Some(f) => w.u8(1).u8(f),
            None => w.u8(0),
        };
        w.u64(self.height);
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let prev_summary = r.digest()?;
        let sd_id = r.digest()?;
        let ledger = r.bytes()?.to_vec();
        let work_summary = r.digest()?;
        let stage = r.u32()?;
        let flag = match r.u8()? {
            0 => None,
            1 => match r.u8()? {
                f @ 0..=2 => Some(f),
                t => return Err(DecodeError::BadTag { what: "flag", tag: t }),
            },
            t => return Err(DecodeError::BadTag { what: "flag presence", tag: t }),
        };
        let height = r.u64()?;
        r.finish()?;
        Ok(Block { prev_summary, sd_id, ledger, work_summary, stage, flag, height })
    }

    pub fn summary(&self) -> Digest256 {
        hash(&self.to_bytes())
    }

    /// Base stage seed bound to this block's contents.
    pub fn stage_seed(&self) -> Result<Seed, HashError> {
        derive_seed(&self.summary(), u64::from(self.stage))
    }

    /// The seed actually used for training: the base seed, or its flag variant in CTF mode.
    pub fn effective_seed(&self) -> Result<Seed, HashError> {
        let base = self.stage_seed()?;
        match self.flag {
            Some(f) => derive_ctf_seed(base, f),
            None => Ok(base),
        }
    }

    pub fn decode_ledger(&self) -> Result<Ledger, DecodeError> {
        Ledger::from_bytes(&self.ledger)
    }
}

/// Height-0 block with an all-zero parent, carrying the shared protocol parameters.
pub fn genesis(params: ProtocolParams, extra: Vec<LedgerEntry>) -> Block {
    let mut entries = vec![LedgerEntry::Params(params)];
    entries.extend(extra);
    Block {
        prev_summary: Digest256::ZERO,
        sd_id: Digest256::ZERO,
        ledger: Ledger::new(entries).to_bytes(),
        work_summary: Digest256::ZERO,
        stage: 0,
        flag: None,
        height: 0,
    }
}

/// A candidate block on top of `prev`.
pub fn make_template(
    prev: &Block,
    sd_id: Digest256,
    ledger: Vec<u8>,
    work_summary: Digest256,
    stage: u32,
    flag: Option<u8>,
) -> Block {
    Block {
        prev_summary: prev.summary(),
        sd_id,
        ledger,
        work_summary,
        stage,
        flag,
        height: prev.height + 1,
    }
}

/// `hash(result_summary || prev_summary) < T_p`.
pub fn check_bgo(result_summary: &Digest256, prev_summary: &Digest256, t: &Threshold) -> bool {
    meets_threshold(&hash_parts(&[result_summary.as_bytes(), prev_summary.as_bytes()]), t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuickVerdict {
    Valid,
    FailedBgo,
    /// Parent not known yet; the block should be buffered.
    Orphan,
}

/// Cheap first phase: parent known and the BGO test holds for the announced result summary.
pub fn quick_verify(block: &Block, result_summary: &Digest256, t: &Threshold, state: &ChainState) -> QuickVerdict {
    if !state.contains(&block.prev_summary) {
        return QuickVerdict::Orphan;
    }
    if check_bgo(result_summary, &block.prev_summary, t) {
        QuickVerdict::Valid
    } else {
        QuickVerdict::FailedBgo
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FullVerdict {
    Accept,
    RejectInvalidWork(String),
    RejectSemantic(String),
}

/// Second phase: recompute the stage behind the block and check every commitment.
pub fn full_verify<W: UsefulWork>(block: &Block, proof: &ProofPackage, work: &W, t: &Threshold) -> FullVerdict {
    let ledger = match block.decode_ledger() {
        Ok(l) => l,
        Err(e) => return FullVerdict::RejectSemantic(format!("ledger: {e}")),
    };
    if let Err(e) = ledger.validate() {
        return FullVerdict::RejectSemantic(e);
    }
    if block.height == 0 || block.stage == 0 {
        return FullVerdict::RejectSemantic("non-genesis block needs height and stage >= 1".into());
    }
    if proof.stage != block.stage {
        return FullVerdict::RejectInvalidWork(format!("package is for stage {}, block claims {}", proof.stage, block.stage));
    }
    if hash(&proof.w_prev) != block.work_summary {
        return FullVerdict::RejectInvalidWork("W_prev does not match the block's work summary".into());
    }
    let base = match block.stage_seed() {
        Ok(s) => s,
        Err(e) => return FullVerdict::RejectSemantic(e.to_string()),
    };
    if proof.seed != base {
        return FullVerdict::RejectInvalidWork("package seed is not bound to this block".into());
    }
    let Ok(seed) = block.effective_seed() else {
        return FullVerdict::RejectSemantic("invalid flag".into());
    };
    let out = match work.compute_stage(&proof.w_prev, seed) {
        Ok(o) => o,
        Err(e) => return FullVerdict::RejectInvalidWork(format!("recomputation failed: {e}")),
    };
    if hash(&out) != proof.result_summary {
        return FullVerdict::RejectInvalidWork("recomputed result differs from the committed summary".into());
    }
    if !check_bgo(&proof.result_summary, &block.prev_summary, t) {
        return FullVerdict::RejectInvalidWork("result does not meet the threshold".into());
    }
    FullVerdict::Accept
}

/// Check summary linkage and height continuity of a chain listed from genesis upward.
pub fn validate_chain(blocks: &[Block]) -> Result<(), ChainError> {
    let Some(first) = blocks.first() else {
        return Ok(());
    };
    if first.height != 0 || first.prev_summary != Digest256::ZERO {
        return Err(ChainError::Linkage { height: first.height, reason: "first block is not a genesis block".into() });
    }
    for pair in blocks.windows(2) {
        let (parent, child) = (&pair[0], &pair[1]);
        if child.prev_summary != parent.summary() {
            return Err(ChainError::Linkage { height: child.height, reason: "prev summary mismatch".into() });
        }
        if child.height != parent.height + 1 {
            return Err(ChainError::Linkage { height: child.height, reason: "height does not follow parent".into() });
        }
        if child.stage == 0 {
            return Err(ChainError::Linkage { height: child.height, reason: "stage 0 outside genesis".into() });
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct Stored {
    block: Block,
    arrival: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcceptOutcome {
    /// Inserted; `fork` is set when the block did not extend past the canonical height.
    Inserted { fork: bool, reorg: bool },
    Duplicate,
    /// Parent unknown; held until it arrives.
    Buffered,
}

#[derive(Serialize)]
struct DumpLine {
    height: u64,
    summary: String,
    prev: String,
    sd_id: String,
    stage: u32,
    flag: Option<u8>,
    arrival: u64,
    canonical: bool,
}

/// Block tree with first-seen longest-chain selection.
#[derive(Clone, Debug)]
pub struct ChainState {
    blocks: HashMap<Digest256, Stored>,
    children: HashMap<Digest256, Vec<Digest256>>,
    orphans: HashMap<Digest256, Vec<(Block, u64)>>,
    genesis: Digest256,
    tip: Digest256,
    fork_events: u64,
    reorgs: u64,
}

impl ChainState {
    pub fn new(genesis: Block) -> Self {
        let g = genesis.summary();
        let mut blocks = HashMap::new();
        blocks.insert(g, Stored { block: genesis, arrival: 0 });
        ChainState {
            blocks,
            children: HashMap::new(),
            orphans: HashMap::new(),
            genesis: g,
            tip: g,
            fork_events: 0,
            reorgs: 0,
        }
    }

    pub fn genesis(&self) -> &Block {
        &self.blocks[&self.genesis].block
    }

    pub fn genesis_summary(&self) -> Digest256 {
        self.genesis
    }

    pub fn contains(&self, d: &Digest256) -> bool {
        self.blocks.contains_key(d)
    }

    pub fn get(&self, d: &Digest256) -> Option<&Block> {
        self.blocks.get(d).map(|s| &s.block)
    }

    pub fn canonical_tip(&self) -> Digest256 {
        self.tip
    }

    pub fn tip_block(&self) -> &Block {
        &self.blocks[&self.tip].block
    }

    pub fn height(&self) -> u64 {
        self.tip_block().height
    }

    pub fn fork_events(&self) -> u64 {
        self.fork_events
    }

    pub fn reorgs(&self) -> u64 {
        self.reorgs
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn orphan_count(&self) -> usize {
        self.orphans.values().map(Vec::len).sum()
    }

    /// Tips: stored blocks without stored children.
    pub fn heads(&self) -> Vec<Digest256> {
        let mut h: Vec<_> = self.blocks.keys().filter(|d| !self.children.contains_key(*d)).copied().collect();
        h.sort();
        h
    }

    /// Build a template over a stored block.
    pub fn make_template(
        &self,
        prev: &Digest256,
        sd_id: Digest256,
        ledger: Vec<u8>,
        work_summary: Digest256,
        stage: u32,
        flag: Option<u8>,
    ) -> Result<Block, ChainError> {
        let parent = self.get(prev).ok_or(ChainError::UnknownParent(*prev))?;
        Ok(make_template(parent, sd_id, ledger, work_summary, stage, flag))
    }

    fn better(&self, a: &Digest256, b: &Digest256) -> bool {
        let (sa, sb) = (&self.blocks[a], &self.blocks[b]);
        (sa.block.height, std::cmp::Reverse(sa.arrival), std::cmp::Reverse(*a))
            > (sb.block.height, std::cmp::Reverse(sb.arrival), std::cmp::Reverse(*b))
    }

    /// Insert a verified block. `arrival` is the first-seen stamp used to break height ties.
    pub fn accept_block(&mut self, block: Block, arrival: u64) -> AcceptOutcome {
        let d = block.summary();
        if self.blocks.contains_key(&d) {
            return AcceptOutcome::Duplicate;
        }
        if !self.blocks.contains_key(&block.prev_summary) {
            let waiting = self.orphans.entry(block.prev_summary).or_default();
            if !waiting.iter().any(|(b, _)| *b == block) {
                waiting.push((block, arrival));
            }
            return AcceptOutcome::Buffered;
        }
        let first = self.insert(d, block, arrival);
        // Attach anything that was waiting on this block (and transitively on its descendants).
        let mut ready = vec![d];
        while let Some(parent) = ready.pop() {
            if let Some(kids) = self.orphans.remove(&parent) {
                for (b, a) in kids {
                    let kd = b.summary();
                    if !self.blocks.contains_key(&kd) {
                        self.insert(kd, b, a);
                        ready.push(kd);
                    }
                }
            }
        }
        first
    }

    fn insert(&mut self, d: Digest256, block: Block, arrival: u64) -> AcceptOutcome {
        let parent = block.prev_summary;
        let fork = block.height <= self.height();
        self.children.entry(parent).or_default().push(d);
        self.blocks.insert(d, Stored { block, arrival });
        if fork {
            self.fork_events += 1;
        }
        let mut reorg = false;
        if self.better(&d, &self.tip.clone()) {
            reorg = parent != self.tip;
            if reorg {
                self.reorgs += 1;
            }
            self.tip = d;
        }
        AcceptOutcome::Inserted { fork, reorg }
    }

    /// Canonical chain from genesis to the tip.
    pub fn canonical_chain(&self) -> Vec<&Block> {
        let mut out = Vec::new();
        let mut cur = self.tip;
        loop {
            let s = &self.blocks[&cur];
            out.push(&s.block);
            if cur == self.genesis {
                break;
            }
            cur = s.block.prev_summary;
        }
        out.reverse();
        out
    }

    pub fn is_canonical(&self, d: &Digest256) -> bool {
        let Some(target) = self.blocks.get(d) else {
            return false;
        };
        let mut cur = self.tip;
        loop {
            let s = &self.blocks[&cur];
            if s.block.height < target.block.height {
                return false;
            }
            if cur == *d {
                return true;
            }
            if cur == self.genesis {
                return false;
            }
            cur = s.block.prev_summary;
        }
    }

    /// One JSON object per block, ordered by (height, arrival).
    pub fn dump_jsonl<W: Write>(&self, mut out: W) -> Result<(), ChainError> {
        let mut all: Vec<(&Digest256, &Stored)> = self.blocks.iter().collect();
        all.sort_by_key(|(d, s)| (s.block.height, s.arrival, **d));
        let canon: std::collections::HashSet<Digest256> = self.canonical_chain().iter().map(|b| b.summary()).collect();
        for (d, s) in all {
            let line = DumpLine {
                height: s.block.height,
                summary: d.to_hex(),
                prev: s.block.prev_summary.to_hex(),
                sd_id: s.block.sd_id.to_hex(),
                stage: s.block.stage,
                flag: s.block.flag,
                arrival: s.arrival,
                canonical: canon.contains(d),
            };
            serde_json::to_writer(&mut out, &line).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

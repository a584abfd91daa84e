//! Block ledger payloads.
//!
//! The ledger is opaque to consensus except for a handful of structural
//! checks on the entries it carries: security deposits, task contracts,
//! verification contracts and the genesis parameter record.

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Reader, Writer};
use crate::hashcore::Digest256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub p: f64,
    pub g: u32,
    pub g_v: u32,
    pub xi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LedgerEntry {
    Params(ProtocolParams),
    Deposit { sd_id: Digest256, owner: u64, amount: u64 },
    Task { task_id: Digest256, reward: u64, stages: u32 },
    Verification { task_id: Digest256, prover_sd: Digest256, passed: bool },
    Opaque(Vec<u8>),
}

const TAG_PARAMS: u8 = 0;
const TAG_DEPOSIT: u8 = 1;
const TAG_TASK: u8 = 2;
const TAG_VERIFICATION: u8 = 3;
const TAG_OPAQUE: u8 = 4;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn new(entries: Vec<LedgerEntry>) -> Self {
        Ledger { entries }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.entries.len() as u64);
        for e in &self.entries {
            let mut body = Writer::new();
            let tag = match e {
                LedgerEntry::Params(pp) => {
                    body.f64(pp.p).u32(pp.g).u32(pp.g_v).f64(pp.xi);
                    TAG_PARAMS
                }
                LedgerEntry::Deposit { sd_id, owner, amount } => {
                    body.digest(sd_id).u64(*owner).u64(*amount);
                    TAG_DEPOSIT
                }
                LedgerEntry::Task { task_id, reward, stages } => {
                    body.digest(task_id).u64(*reward).u32(*stages);
                    TAG_TASK
                }
                LedgerEntry::Verification { task_id, prover_sd, passed } => {
                    body.digest(task_id).digest(prover_sd).u8(u8::from(*passed));
                    TAG_VERIFICATION
                }
                LedgerEntry::Opaque(b) => {
                    body.bytes(b);
                    TAG_OPAQUE
                }
            };
            w.u8(tag).bytes(&body.finish());
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let n = r.u64()?;
        let mut entries = Vec::new();
        for _ in 0..n {
            let tag = r.u8()?;
            let mut b = Reader::new(r.bytes()?);
            let e = match tag {
                TAG_PARAMS => LedgerEntry::Params(ProtocolParams {
                    p: b.f64()?,
                    g: b.u32()?,
                    g_v: b.u32()?,
                    xi: b.f64()?,
                }),
                TAG_DEPOSIT => LedgerEntry::Deposit { sd_id: b.digest()?, owner: b.u64()?, amount: b.u64()? },
                TAG_TASK => LedgerEntry::Task { task_id: b.digest()?, reward: b.u64()?, stages: b.u32()? },
                TAG_VERIFICATION => LedgerEntry::Verification {
                    task_id: b.digest()?,
                    prover_sd: b.digest()?,
                    passed: match b.u8()? {
                        0 => false,
                        1 => true,
                        t => return Err(DecodeError::BadTag { what: "verdict", tag: t }),
                    },
                },
                TAG_OPAQUE => LedgerEntry::Opaque(b.bytes()?.to_vec()),
                t => return Err(DecodeError::BadTag { what: "ledger entry", tag: t }),
            };
            b.finish()?;
            entries.push(e);
        }
        r.finish()?;
        Ok(Ledger { entries })
    }

    /// Structural checks only: positive amounts, sane params, no duplicate ids within one ledger.
    pub fn validate(&self) -> Result<(), String> {
        let mut deposits = std::collections::HashSet::new();
        let mut tasks = std::collections::HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            match e {
                LedgerEntry::Params(pp) => {
                    if !(0.0..=1.0).contains(&pp.p) || !(0.0..=1.0).contains(&pp.xi) || pp.g_v >= pp.g {
                        return Err(format!("entry {i}: invalid protocol parameters"));
                    }
                }
                LedgerEntry::Deposit { sd_id, amount, .. } => {
                    if *amount == 0 {
                        return Err(format!("entry {i}: zero deposit"));
                    }
                    if !deposits.insert(*sd_id) {
                        return Err(format!("entry {i}: duplicate deposit {sd_id}"));
                    }
                }
                LedgerEntry::Task { task_id, reward, stages } => {
                    if *reward == 0 || *stages == 0 {
                        return Err(format!("entry {i}: task needs a positive reward and stage count"));
                    }
                    if !tasks.insert(*task_id) {
                        return Err(format!("entry {i}: duplicate task {task_id}"));
                    }
                }
                LedgerEntry::Verification { .. } | LedgerEntry::Opaque(_) => {}
            }
        }
        Ok(())
    }

    pub fn deposits(&self) -> impl Iterator<Item = (Digest256, u64, u64)> + '_ {
        self.entries.iter().filter_map(|e| match e {
            LedgerEntry::Deposit { sd_id, owner, amount } => Some((*sd_id, *owner, *amount)),
            _ => None,
        })
    }

    pub fn params(&self) -> Option<ProtocolParams> {
        self.entries.iter().find_map(|e| match e {
            LedgerEntry::Params(pp) => Some(*pp),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashcore::hash;

    #[test]
    fn roundtrip_all_entry_kinds() {
        let l = Ledger::new(vec![
            LedgerEntry::Params(ProtocolParams { p: 1e-4, g: 25, g_v: 5, xi: 0.2 }),
            LedgerEntry::Deposit { sd_id: hash(b"a"), owner: 3, amount: 100 },
            LedgerEntry::Task { task_id: hash(b"t"), reward: 1000, stages: 1000 },
            LedgerEntry::Verification { task_id: hash(b"t"), prover_sd: hash(b"a"), passed: true },
            LedgerEntry::Opaque(vec![1, 2, 3]),
        ]);
        let back = Ledger::from_bytes(&l.to_bytes()).unwrap();
        assert_eq!(back, l);
        assert!(l.validate().is_ok());
        assert_eq!(l.params().unwrap().g, 25);
    }

    #[test]
    fn structural_violations() {
        let dup = Ledger::new(vec![
            LedgerEntry::Deposit { sd_id: hash(b"a"), owner: 1, amount: 100 },
            LedgerEntry::Deposit { sd_id: hash(b"a"), owner: 2, amount: 100 },
        ]);
        assert!(dup.validate().is_err());
        let zero = Ledger::new(vec![LedgerEntry::Deposit { sd_id: hash(b"a"), owner: 1, amount: 0 }]);
        assert!(zero.validate().is_err());
        let mut bytes = Ledger::default().to_bytes();
        bytes[7] = 1;
        bytes.push(9);
        bytes.extend_from_slice(&0u64.to_be_bytes());
        assert!(matches!(Ledger::from_bytes(&bytes), Err(DecodeError::BadTag { .. })));
    }
}

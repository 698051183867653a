use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TraceError;

/// Branch instruction class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BranchKind {
    Cond,
    Uncond,
    Call,
    Ret,
    Indirect,
}

impl BranchKind {
    pub const ALL: [BranchKind; 5] = [
        BranchKind::Cond,
        BranchKind::Uncond,
        BranchKind::Call,
        BranchKind::Ret,
        BranchKind::Indirect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BranchKind::Cond => "COND",
            BranchKind::Uncond => "UNCOND",
            BranchKind::Call => "CALL",
            BranchKind::Ret => "RET",
            BranchKind::Indirect => "INDIRECT",
        }
    }

    /// Numeric code used by the binary formats.
    pub fn code(self) -> u8 {
        match self {
            BranchKind::Cond => 0,
            BranchKind::Uncond => 1,
            BranchKind::Call => 2,
            BranchKind::Ret => 3,
            BranchKind::Indirect => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        BranchKind::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for BranchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BranchKind {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BranchKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| TraceError::Corrupt(format!("unknown branch kind `{s}`")))
    }
}

/// One retired branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BranchRecord {
    /// Index of the instruction in the retired stream.
    pub seq: u64,
    pub ip: u64,
    pub kind: BranchKind,
    pub target: u64,
    /// Observed direction. Always `true` for non-conditional kinds.
    pub taken: bool,
}

impl BranchRecord {
    pub fn cond(seq: u64, ip: u64, target: u64, taken: bool) -> Self {
        BranchRecord { seq, ip, kind: BranchKind::Cond, target, taken }
    }

    pub fn is_cond(&self) -> bool {
        self.kind == BranchKind::Cond
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if !self.is_cond() && !self.taken {
            return Err(format!(
                "seq {}: {} branch must be recorded as taken",
                self.seq, self.kind
            ));
        }
        Ok(())
    }
}

/// Branch fields carried by an [`InstructionRecord`] that is a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BranchInfo {
    pub kind: BranchKind,
    pub target: u64,
    pub taken: bool,
}

/// A storage location an instruction can read or write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Location {
    Reg(u8),
    Mem(u64),
}

/// One retired instruction together with its dataflow read/write sets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct InstructionRecord {
    pub seq: u64,
    pub ip: u64,
    pub branch: Option<BranchInfo>,
    pub regs_read: Vec<u8>,
    /// Register writes with the value written.
    pub regs_written: Vec<(u8, u64)>,
    pub mem_read: Vec<u64>,
    pub mem_written: Vec<u64>,
}

impl InstructionRecord {
    pub fn filler(seq: u64, ip: u64) -> Self {
        InstructionRecord { seq, ip, ..Default::default() }
    }

    pub fn is_branch(&self) -> bool {
        self.branch.is_some()
    }

    pub fn is_cond(&self) -> bool {
        matches!(self.branch, Some(b) if b.kind == BranchKind::Cond)
    }

    pub fn as_branch(&self) -> Option<BranchRecord> {
        self.branch.map(|b| BranchRecord {
            seq: self.seq,
            ip: self.ip,
            kind: b.kind,
            target: b.target,
            taken: b.taken,
        })
    }

    /// Locations read, registers first.
    pub fn reads(&self) -> impl Iterator<Item = Location> + '_ {
        self.regs_read
            .iter()
            .map(|&r| Location::Reg(r))
            .chain(self.mem_read.iter().map(|&a| Location::Mem(a)))
    }

    pub fn writes(&self) -> impl Iterator<Item = Location> + '_ {
        self.regs_written
            .iter()
            .map(|&(r, _)| Location::Reg(r))
            .chain(self.mem_written.iter().map(|&a| Location::Mem(a)))
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if let Some(b) = self.branch {
            if b.kind != BranchKind::Cond && !b.taken {
                return Err(format!("seq {}: {} branch must be taken", self.seq, b.kind));
            }
            if b.kind == BranchKind::Cond && self.regs_read.is_empty() && self.mem_read.is_empty() {
                return Err(format!(
                    "seq {}: conditional branch reads no register or memory",
                    self.seq
                ));
            }
        }
        Ok(())
    }
}

/// Summary counts of a trace.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraceMeta {
    pub format: String,
    pub instructions: u64,
    pub branches: u64,
    pub cond_branches: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_id: Option<String>,
}

/// A branch-only trace.
///
/// For branch-only files the instruction count is not stored, so it is taken
/// to be `last seq + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BranchTrace {
    pub meta: TraceMeta,
    pub records: Vec<BranchRecord>,
}

impl BranchTrace {
    pub fn from_records(format: &str, records: Vec<BranchRecord>) -> Self {
        let meta = TraceMeta {
            format: format.to_string(),
            instructions: records.last().map_or(0, |r| r.seq + 1),
            branches: records.len() as u64,
            cond_branches: records.iter().filter(|r| r.is_cond()).count() as u64,
            seed: None,
            spec_id: None,
        };
        BranchTrace { meta, records }
    }

    pub fn cond_records(&self) -> impl Iterator<Item = &BranchRecord> {
        self.records.iter().filter(|r| r.is_cond())
    }
}

/// A full instruction trace.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InstrTrace {
    pub meta: TraceMeta,
    pub records: Vec<InstructionRecord>,
}

impl InstrTrace {
    pub fn from_records(format: &str, records: Vec<InstructionRecord>) -> Self {
        let branches = records.iter().filter(|r| r.is_branch()).count() as u64;
        let cond = records.iter().filter(|r| r.is_cond()).count() as u64;
        InstrTrace {
            meta: TraceMeta {
                format: format.to_string(),
                instructions: records.len() as u64,
                branches,
                cond_branches: cond,
                seed: None,
                spec_id: None,
            },
            records,
        }
    }
}

/// Exactly the branch records of an instruction trace, same seq values, same
/// order.
pub fn project_branches(trace: &InstrTrace) -> BranchTrace {
    let records: Vec<BranchRecord> = trace.records.iter().filter_map(|r| r.as_branch()).collect();
    let mut out = BranchTrace::from_records("BT1", records);
    out.meta.instructions = trace.meta.instructions;
    out.meta.seed = trace.meta.seed;
    out.meta.spec_id = trace.meta.spec_id.clone();
    out
}

pub(crate) fn check_monotone<I: IntoIterator<Item = u64>>(seqs: I) -> Result<(), u64> {
    let mut prev: Option<u64> = None;
    for s in seqs {
        if let Some(p) = prev {
            if s <= p {
                return Err(s);
            }
        }
        prev = Some(s);
    }
    Ok(())
}

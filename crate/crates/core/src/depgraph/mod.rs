//! Backward dataflow slicing over instruction windows: dependency branches
//! of hard-to-predict branches and pre-branch register values.
//!
//! A value is identified by the dynamic write that produced it. Reads whose
//! producer lies outside the window see the window-entry value of that
//! location, shared by every such read.

mod regvals;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::trace::{InstrTrace, InstructionRecord, Location};

pub use regvals::{regval_snapshots, write_regvals_csv, RegValueHistogram, DEFAULT_TRACKED_REGS, DEFAULT_VALUE_MASK};

pub const DEFAULT_WINDOW: usize = 5_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DepError {
    #[error("branch {0:#x} never executes as a conditional branch in the trace")]
    EmptyTarget(u64),
    #[error("{0}")]
    Argument(String),
}

/// Producer seq of a value; `None` is the window-entry state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueInstance {
    pub producer: Option<u64>,
    pub location: Location,
}

impl ValueInstance {
    pub fn source(location: Location) -> Self {
        ValueInstance { producer: None, location }
    }

    pub fn written(producer: u64, location: Location) -> Self {
        ValueInstance { producer: Some(producer), location }
    }
}

/// The analysis point plus the `w` instructions before it, with the last
/// writer of every location written inside.
#[derive(Debug, Clone)]
pub struct DefUseWindow {
    w: usize,
    include_memory: bool,
    ring: VecDeque<InstructionRecord>,
    last_writer: HashMap<Location, u64>,
}

impl DefUseWindow {
    pub fn new(w: usize) -> Self {
        DefUseWindow { w, include_memory: true, ring: VecDeque::with_capacity(w + 1), last_writer: HashMap::new() }
    }

    pub fn registers_only(mut self) -> Self {
        self.include_memory = false;
        self
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &InstructionRecord> {
        self.ring.iter()
    }

    pub fn last_writer(&self, loc: Location) -> Option<u64> {
        self.last_writer.get(&loc).copied()
    }

    pub fn push(&mut self, rec: InstructionRecord) {
        if self.ring.len() == self.w + 1 {
            let old = self.ring.pop_front().expect("non-empty ring");
            for loc in self.locations(old.writes()) {
                if self.last_writer.get(&loc) == Some(&old.seq) {
                    self.last_writer.remove(&loc);
                }
            }
        }
        for loc in self.locations(rec.writes()) {
            self.last_writer.insert(loc, rec.seq);
        }
        self.ring.push_back(rec);
    }

    fn locations<'a>(&self, it: impl Iterator<Item = Location> + 'a) -> Vec<Location> {
        let mem = self.include_memory;
        it.filter(|l| mem || matches!(l, Location::Reg(_))).collect()
    }

    fn position(&self, seq: u64) -> Option<usize> {
        self.ring.binary_search_by_key(&seq, |r| r.seq).ok()
    }

    fn producer(&self, pos: usize, loc: Location) -> Option<usize> {
        (0..pos).rev().find(|&j| self.locations(self.ring[j].writes()).contains(&loc))
    }

    /// Every value the instruction at `target` depends on, transitively.
    pub fn backward_slice(&self, target: u64) -> BTreeSet<ValueInstance> {
        let mut out = BTreeSet::new();
        let Some(start) = self.position(target) else {
            return out;
        };
        let mut stack = vec![start];
        let mut seen = HashSet::from([start]);
        while let Some(pos) = stack.pop() {
            for loc in self.locations(self.ring[pos].reads()) {
                match self.producer(pos, loc) {
                    Some(p) => {
                        out.insert(ValueInstance::written(self.ring[p].seq, loc));
                        if seen.insert(p) {
                            stack.push(p);
                        }
                    }
                    None => {
                        out.insert(ValueInstance::source(loc));
                    }
                }
            }
        }
        out
    }

    /// Values read directly by the instruction at `target`.
    pub fn direct_reads(&self, target: u64) -> BTreeSet<ValueInstance> {
        let Some(pos) = self.position(target) else {
            return BTreeSet::new();
        };
        self.locations(self.ring[pos].reads())
            .into_iter()
            .map(|loc| match self.producer(pos, loc) {
                Some(p) => ValueInstance::written(self.ring[p].seq, loc),
                None => ValueInstance::source(loc),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DepOptions {
    pub window: usize,
    pub include_memory: bool,
    /// Compare the two branches' direct read sets instead of full slices.
    pub direct_reads_only: bool,
}

impl Default for DepOptions {
    fn default() -> Self {
        DepOptions { window: DEFAULT_WINDOW, include_memory: true, direct_reads_only: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DependencyDistribution {
    pub h2p_ip: u64,
    pub executions: u64,
    pub window: usize,
    /// dep ip -> history position -> occurrences.
    pub per_dep: BTreeMap<u64, BTreeMap<u32, u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DependencySummary {
    pub h2p_ip: u64,
    pub n_dep_branches: usize,
    pub min_pos: Option<u32>,
    pub max_pos: Option<u32>,
}

impl DependencyDistribution {
    pub fn mass(&self, dep: u64) -> u64 {
        self.per_dep.get(&dep).map_or(0, |h| h.values().sum())
    }

    pub fn total_mass(&self) -> u64 {
        self.per_dep.values().flat_map(|h| h.values()).sum()
    }

    /// Dependency branches by descending mass, ties by ascending ip.
    pub fn ranked(&self) -> Vec<(u64, u64)> {
        let mut v: Vec<(u64, u64)> = self.per_dep.keys().map(|&ip| (ip, self.mass(ip))).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    pub fn summary(&self) -> DependencySummary {
        let positions = self.per_dep.values().flat_map(|h| h.keys().copied());
        DependencySummary {
            h2p_ip: self.h2p_ip,
            n_dep_branches: self.per_dep.len(),
            min_pos: positions.clone().min(),
            max_pos: positions.max(),
        }
    }
}

/// Reads of every instruction, with the index of the instruction that
/// produced each read value anywhere earlier in the trace.
struct Prepared<'a> {
    records: &'a [InstructionRecord],
    /// `read_start[i]..read_start[i + 1]` indexes `reads`.
    read_start: Vec<usize>,
    /// (location, producer index, producer write slot).
    reads: Vec<(Location, Option<(usize, usize)>)>,
    /// COND branches strictly before each index.
    cond_before: Vec<u32>,
    write_slots: usize,
}

impl<'a> Prepared<'a> {
    fn new(records: &'a [InstructionRecord], include_memory: bool) -> Self {
        let keep = |l: &Location| include_memory || matches!(l, Location::Reg(_));
        let mut last: HashMap<Location, (usize, usize)> = HashMap::new();
        let mut read_start = Vec::with_capacity(records.len() + 1);
        let mut reads = Vec::new();
        let mut cond_before = Vec::with_capacity(records.len() + 1);
        let mut conds = 0u32;
        let mut slot = 0usize;
        for (i, r) in records.iter().enumerate() {
            read_start.push(reads.len());
            cond_before.push(conds);
            for loc in r.reads().filter(keep) {
                reads.push((loc, last.get(&loc).copied()));
            }
            for loc in r.writes().filter(keep) {
                last.insert(loc, (i, slot));
                slot += 1;
            }
            conds += u32::from(r.is_cond());
        }
        read_start.push(reads.len());
        cond_before.push(conds);
        Prepared { records, read_start, reads, cond_before, write_slots: slot }
    }

    fn reads_of(&self, i: usize) -> &[(Location, Option<(usize, usize)>)] {
        &self.reads[self.read_start[i]..self.read_start[i + 1]]
    }

    fn analyze(&self, ip: u64, opts: &DepOptions) -> Result<DependencyDistribution, DepError> {
        let targets: Vec<usize> =
            self.records.iter().enumerate().filter(|(_, r)| r.ip == ip && r.is_cond()).map(|(i, _)| i).collect();
        if targets.is_empty() {
            return Err(DepError::EmptyTarget(ip));
        }
        let mut dist = DependencyDistribution { h2p_ip: ip, executions: targets.len() as u64, window: opts.window, per_dep: BTreeMap::new() };
        // Stamps avoid clearing per-execution scratch state.
        let mut in_slice = vec![0u32; self.write_slots];
        let mut visited = vec![0u32; self.records.len()];
        let mut hit = vec![0u32; self.records.len()];
        let mut sources: HashSet<Location> = HashSet::new();
        let mut stack = Vec::new();
        for (k, &t) in targets.iter().enumerate() {
            let stamp = k as u32 + 1;
            let w0 = t.saturating_sub(opts.window);
            sources.clear();
            stack.clear();
            stack.push(t);
            visited[t] = stamp;
            while let Some(x) = stack.pop() {
                for &(loc, prod) in self.reads_of(x) {
                    match prod {
                        Some((p, s)) if p >= w0 => {
                            in_slice[s] = stamp;
                            if !opts.direct_reads_only && visited[p] != stamp {
                                visited[p] = stamp;
                                stack.push(p);
                            }
                        }
                        _ => {
                            sources.insert(loc);
                        }
                    }
                }
            }
            for i in w0..t {
                let reaches = self.reads_of(i).iter().any(|&(loc, prod)| match prod {
                    Some((p, s)) if p >= w0 => in_slice[s] == stamp || (!opts.direct_reads_only && hit[p] == stamp),
                    _ => sources.contains(&loc),
                });
                if reaches {
                    hit[i] = stamp;
                    if self.records[i].is_cond() {
                        let pos = self.cond_before[t] - self.cond_before[i];
                        *dist.per_dep.entry(self.records[i].ip).or_default().entry(pos).or_default() += 1;
                    }
                }
            }
        }
        Ok(dist)
    }
}

pub fn find_dependency_branches(trace: &InstrTrace, h2p_ip: u64, opts: &DepOptions) -> Result<DependencyDistribution, DepError> {
    Prepared::new(&trace.records, opts.include_memory).analyze(h2p_ip, opts)
}

/// Analyzes several targets in parallel over one shared preparation pass.
pub fn find_dependency_branches_many(
    trace: &InstrTrace,
    h2p_ips: &[u64],
    opts: &DepOptions,
) -> Vec<Result<DependencyDistribution, DepError>> {
    let prepared = Prepared::new(&trace.records, opts.include_memory);
    h2p_ips.par_iter().map(|&ip| prepared.analyze(ip, opts)).collect()
}

pub fn write_deps_csv<W: Write>(dists: &[DependencyDistribution], mut out: W) -> io::Result<()> {
    writeln!(out, "h2p_ip,dep_ip,position,count")?;
    for d in dists {
        for (dep, hist) in &d.per_dep {
            for (pos, n) in hist {
                writeln!(out, "{:#x},{:#x},{},{}", d.h2p_ip, dep, pos, n)?;
            }
        }
    }
    Ok(())
}

pub fn write_deps_summary_csv<W: Write>(dists: &[DependencyDistribution], mut out: W) -> io::Result<()> {
    writeln!(out, "h2p_ip,n_dep_branches,min_pos,max_pos")?;
    let f = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
    for d in dists {
        let s = d.summary();
        writeln!(out, "{:#x},{},{},{}", s.h2p_ip, s.n_dep_branches, f(s.min_pos), f(s.max_pos))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{BranchInfo, BranchKind};

    pub(crate) fn inst(seq: u64, reads: &[u8], writes: &[u8]) -> InstructionRecord {
        InstructionRecord {
            seq,
            ip: 0x100 + 4 * seq,
            regs_read: reads.to_vec(),
            regs_written: writes.iter().map(|&r| (r, seq)).collect(),
            ..Default::default()
        }
    }

    pub(crate) fn branch(seq: u64, ip: u64, reads: &[u8]) -> InstructionRecord {
        InstructionRecord {
            ip,
            branch: Some(BranchInfo { kind: BranchKind::Cond, target: 0, taken: true }),
            ..inst(seq, reads, &[])
        }
    }

    #[test]
    fn one_hop_and_source() {
        let mut w = DefUseWindow::new(10);
        w.push(inst(1, &[], &[1]));
        w.push(inst(2, &[1], &[]));
        assert_eq!(w.backward_slice(2), BTreeSet::from([ValueInstance::written(1, Location::Reg(1))]));
        w.push(inst(3, &[7], &[]));
        assert_eq!(w.backward_slice(3), BTreeSet::from([ValueInstance::source(Location::Reg(7))]));
        assert_eq!(w.last_writer(Location::Reg(1)), Some(1));
    }

    #[test]
    fn eviction_keeps_last_writer_consistent() {
        let mut w = DefUseWindow::new(1);
        w.push(inst(1, &[], &[1]));
        w.push(inst(2, &[], &[2]));
        w.push(inst(3, &[1], &[]));
        assert_eq!(w.len(), 2);
        assert_eq!(w.last_writer(Location::Reg(1)), None);
        assert_eq!(w.backward_slice(3), BTreeSet::from([ValueInstance::source(Location::Reg(1))]));
    }

    #[test]
    fn micro_trace_dependency() {
        let t = InstrTrace::from_records(
            "IT1",
            vec![inst(0, &[], &[1]), branch(1, 0xa, &[1]), inst(2, &[], &[2]), branch(3, 0xb, &[1, 2])],
        );
        let d = find_dependency_branches(&t, 0xb, &DepOptions::default()).unwrap();
        assert_eq!(d.per_dep, BTreeMap::from([(0xa, BTreeMap::from([(1, 1)]))]));
        assert_eq!(d.summary(), DependencySummary { h2p_ip: 0xb, n_dep_branches: 1, min_pos: Some(1), max_pos: Some(1) });
        assert_eq!(find_dependency_branches(&t, 0xc, &DepOptions::default()), Err(DepError::EmptyTarget(0xc)));
    }

    #[test]
    fn fresh_register_has_no_dependencies() {
        let t = InstrTrace::from_records(
            "IT1",
            vec![inst(0, &[], &[3]), branch(1, 0xa, &[3]), inst(2, &[], &[3]), branch(3, 0xb, &[3])],
        );
        let d = find_dependency_branches(&t, 0xb, &DepOptions::default()).unwrap();
        assert!(d.per_dep.is_empty());
        assert_eq!(d.summary().min_pos, None);
    }
}

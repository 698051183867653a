//! Per-slice branch statistics and misprediction characterization.

mod recurrence;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::predictors::MispredictionStream;

pub use recurrence::{decade_bin, recurrence_intervals, IpRecurrence, RecurrenceReport, DECADES};

pub const DEFAULT_SLICE_LEN: u64 = 30_000_000;
pub const DEFAULT_BIN_WIDTH: u64 = 100;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchCounts {
    pub executions: u64,
    pub mispredictions: u64,
}

impl BranchCounts {
    pub fn accuracy(&self) -> Option<f64> {
        (self.executions > 0).then(|| 1.0 - self.mispredictions as f64 / self.executions as f64)
    }

    pub fn add(&mut self, other: BranchCounts) {
        self.executions += other.executions;
        self.mispredictions += other.mispredictions;
    }
}

pub type PerIp = BTreeMap<u64, BranchCounts>;

/// Per-static-branch counters within one instruction slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceStats {
    pub index: u64,
    pub slice_len: u64,
    /// Set on a final slice shorter than `slice_len`.
    pub partial: bool,
    pub per_ip: PerIp,
}

impl SliceStats {
    pub fn totals(&self) -> BranchCounts {
        let mut t = BranchCounts::default();
        for c in self.per_ip.values() {
            t.add(*c);
        }
        t
    }
}

/// Splits a stream into slices by `seq / slice_len`. Slices without any
/// conditional branches are still emitted so slice indices are dense.
pub fn accumulate_slice_stats(stream: &MispredictionStream, slice_len: u64) -> Vec<SliceStats> {
    assert!(slice_len >= 1, "slice_len must be >= 1");
    let Some(last) = stream.outcomes.last() else {
        return Vec::new();
    };
    let instructions = stream.instructions.max(last.seq + 1);
    let count = instructions.div_ceil(slice_len);
    let mut slices: Vec<SliceStats> = (0..count)
        .map(|index| SliceStats {
            index,
            slice_len,
            partial: (index + 1) * slice_len > instructions,
            per_ip: PerIp::new(),
        })
        .collect();
    for o in &stream.outcomes {
        let c = slices[(o.seq / slice_len) as usize].per_ip.entry(o.ip).or_default();
        c.executions += 1;
        c.mispredictions += u64::from(o.mispredicted());
    }
    slices
}

pub fn per_ip_totals(stream: &MispredictionStream) -> PerIp {
    let mut out = PerIp::new();
    for o in &stream.outcomes {
        let c = out.entry(o.ip).or_default();
        c.executions += 1;
        c.mispredictions += u64::from(o.mispredicted());
    }
    out
}

pub fn merge_slices(slices: &[SliceStats]) -> PerIp {
    let mut out = PerIp::new();
    for s in slices {
        for (&ip, c) in &s.per_ip {
            out.entry(ip).or_default().add(*c);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H2PCriteria {
    pub max_accuracy: f64,
    pub min_executions: u64,
    pub min_mispredictions: u64,
}

impl Default for H2PCriteria {
    fn default() -> Self {
        H2PCriteria { max_accuracy: 0.99, min_executions: 15_000, min_mispredictions: 1_000 }
    }
}

impl H2PCriteria {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.max_accuracy > 0.0 && self.max_accuracy <= 1.0) {
            return Err(format!("max_accuracy must be in (0, 1], got {}", self.max_accuracy));
        }
        if self.min_executions == 0 || self.min_mispredictions == 0 {
            return Err("H2P thresholds must be positive".into());
        }
        Ok(())
    }

    pub fn accepts(&self, c: &BranchCounts) -> bool {
        c.executions >= self.min_executions
            && c.mispredictions >= self.min_mispredictions
            && c.accuracy().is_some_and(|a| a < self.max_accuracy)
    }
}

pub fn screen_counts(per_ip: &PerIp, criteria: &H2PCriteria) -> BTreeSet<u64> {
    per_ip.iter().filter(|(_, c)| criteria.accepts(c)).map(|(&ip, _)| ip).collect()
}

pub fn screen_h2p(stats: &SliceStats, criteria: &H2PCriteria) -> BTreeSet<u64> {
    screen_counts(&stats.per_ip, criteria)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceH2P {
    pub index: u64,
    pub partial: bool,
    pub h2ps: BTreeSet<u64>,
    pub static_branches: usize,
    pub mispredictions: u64,
    pub h2p_mispredictions: u64,
    pub h2p_executions: u64,
}

impl SliceH2P {
    pub fn h2p_fraction(&self) -> Option<f64> {
        (self.mispredictions > 0).then(|| self.h2p_mispredictions as f64 / self.mispredictions as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H2PReport {
    pub criteria: H2PCriteria,
    pub slices: Vec<SliceH2P>,
    /// Every ip flagged in at least one slice.
    pub union: BTreeSet<u64>,
    /// Number of slices in which each ip was flagged.
    pub occupancy: BTreeMap<u64, usize>,
}

impl H2PReport {
    pub fn build(slices: &[SliceStats], criteria: &H2PCriteria) -> Self {
        let mut out = H2PReport { criteria: *criteria, slices: Vec::new(), union: BTreeSet::new(), occupancy: BTreeMap::new() };
        for s in slices {
            let h2ps = screen_h2p(s, criteria);
            let totals = s.totals();
            let (mut hm, mut he) = (0, 0);
            for ip in &h2ps {
                let c = s.per_ip[ip];
                hm += c.mispredictions;
                he += c.executions;
                *out.occupancy.entry(*ip).or_default() += 1;
                out.union.insert(*ip);
            }
            out.slices.push(SliceH2P {
                index: s.index,
                partial: s.partial,
                static_branches: s.per_ip.len(),
                h2ps,
                mispredictions: totals.mispredictions,
                h2p_mispredictions: hm,
                h2p_executions: he,
            });
        }
        out
    }

    /// Slices that count toward per-slice averages: full slices, or all
    /// slices when there is no full one.
    pub fn averaged_slices(&self) -> Vec<&SliceH2P> {
        let full: Vec<&SliceH2P> = self.slices.iter().filter(|s| !s.partial).collect();
        if full.is_empty() {
            self.slices.iter().collect()
        } else {
            full
        }
    }

    pub fn mean_h2p_fraction(&self) -> Option<f64> {
        mean(self.averaged_slices().iter().filter_map(|s| s.h2p_fraction()))
    }

    /// Fraction of averaged slices in which `ip` was flagged.
    pub fn slice_hit_rate(&self, ip: u64) -> f64 {
        let s = self.averaged_slices();
        if s.is_empty() {
            return 0.0;
        }
        s.iter().filter(|x| x.h2ps.contains(&ip)).count() as f64 / s.len() as f64
    }

    /// `slice,ip,executions,mispredictions,accuracy`, one row per flagged
    /// (slice, ip).
    pub fn write_csv<W: Write>(&self, stats: &[SliceStats], mut out: W) -> io::Result<()> {
        writeln!(out, "slice,ip,executions,mispredictions,accuracy")?;
        for (s, st) in self.slices.iter().zip(stats) {
            for ip in &s.h2ps {
                let c = st.per_ip[ip];
                writeln!(out, "{},{:#x},{},{},{:.6}", s.index, ip, c.executions, c.mispredictions, c.accuracy().unwrap_or(0.0))?;
            }
        }
        Ok(())
    }
}

fn mean<I: IntoIterator<Item = f64>>(values: I) -> Option<f64> {
    let (n, sum) = values.into_iter().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| sum / n as f64)
}

fn median_u64(mut v: Vec<u64>) -> Option<u64> {
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    Some(v[(v.len() - 1) / 2])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeavyHitter {
    pub rank: usize,
    pub ip: u64,
    pub mispredictions: u64,
    pub cumulative_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeavyHitters {
    pub entries: Vec<HeavyHitter>,
    /// Set when the input had no mispredictions at all.
    pub no_mispredictions: bool,
}

impl HeavyHitters {
    pub fn top_fraction(&self, k: usize) -> f64 {
        match k.min(self.entries.len()) {
            0 => 0.0,
            n => self.entries[n - 1].cumulative_fraction,
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "rank,ip,mispredictions,cumulative_fraction")?;
        for h in &self.entries {
            writeln!(out, "{},{:#x},{},{:.6}", h.rank, h.ip, h.mispredictions, h.cumulative_fraction)?;
        }
        Ok(())
    }
}

/// Ranks ips by mispredictions (descending, ties by ascending ip). Ips
/// without mispredictions are left out.
pub fn heavy_hitters(totals: &BTreeMap<u64, u64>) -> HeavyHitters {
    let total: u64 = totals.values().sum();
    if total == 0 {
        return HeavyHitters { entries: Vec::new(), no_mispredictions: true };
    }
    let mut ranked: Vec<(u64, u64)> = totals.iter().filter(|(_, &m)| m > 0).map(|(&ip, &m)| (ip, m)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut running = 0u64;
    let entries = ranked
        .into_iter()
        .enumerate()
        .map(|(i, (ip, m))| {
            running += m;
            HeavyHitter { rank: i + 1, ip, mispredictions: m, cumulative_fraction: running as f64 / total as f64 }
        })
        .collect();
    HeavyHitters { entries, no_mispredictions: false }
}

pub fn misprediction_totals(per_ip: &PerIp) -> BTreeMap<u64, u64> {
    per_ip.iter().map(|(&ip, c)| (ip, c.mispredictions)).collect()
}

/// Ips appearing in at least `k` of the given sets.
pub fn cross_input_h2p(sets: &[BTreeSet<u64>], k: usize) -> BTreeSet<u64> {
    assert!(k >= 1, "k must be >= 1");
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for s in sets {
        for &ip in s {
            *counts.entry(ip).or_default() += 1;
        }
    }
    counts.into_iter().filter(|&(_, n)| n >= k).map(|(ip, _)| ip).collect()
}

/// Aggregate accuracy over ips not in `excluded`; `None` when nothing is
/// left.
pub fn accuracy_excluding(per_ip: &PerIp, excluded: &BTreeSet<u64>) -> Option<f64> {
    let mut t = BranchCounts::default();
    for (ip, c) in per_ip {
        if !excluded.contains(ip) {
            t.add(*c);
        }
    }
    t.accuracy()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RareBin {
    pub lo: u64,
    pub hi: u64,
    pub count: usize,
    pub mean_acc: Option<f64>,
    /// Population standard deviation.
    pub std_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RareBinReport {
    pub bin_width: u64,
    /// Consecutive bins `[k*w, (k+1)*w)` from 0 through the bin holding the
    /// most executed ip; empty bins have no statistics.
    pub bins: Vec<RareBin>,
}

impl RareBinReport {
    pub fn bin(&self, k: usize) -> Option<&RareBin> {
        self.bins.get(k)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "bin_lo,bin_hi,count,mean_acc,std_acc")?;
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for b in &self.bins {
            writeln!(out, "{},{},{},{},{}", b.lo, b.hi, b.count, f(b.mean_acc), f(b.std_acc))?;
        }
        Ok(())
    }
}

pub fn rare_bins(per_ip: &PerIp, bin_width: u64) -> RareBinReport {
    assert!(bin_width >= 1, "bin_width must be >= 1");
    let max_bin = per_ip.values().filter(|c| c.executions > 0).map(|c| c.executions / bin_width).max();
    let Some(max_bin) = max_bin else {
        return RareBinReport { bin_width, bins: Vec::new() };
    };
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); max_bin as usize + 1];
    for c in per_ip.values() {
        if let Some(a) = c.accuracy() {
            groups[(c.executions / bin_width) as usize].push(a);
        }
    }
    let bins = groups
        .into_iter()
        .enumerate()
        .map(|(k, accs)| {
            let m = mean(accs.iter().copied());
            let sd = m.map(|m| (accs.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / accs.len() as f64).sqrt());
            RareBin { lo: k as u64 * bin_width, hi: (k as u64 + 1) * bin_width, count: accs.len(), mean_acc: m, std_acc: sd }
        })
        .collect();
    RareBinReport { bin_width, bins }
}

/// Trace-level summary with per-slice averages over full slices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub instructions: u64,
    pub cond_executions: u64,
    pub slices: usize,
    pub full_slices: usize,
    pub static_branches_total: usize,
    pub static_branches_median_per_slice: Option<u64>,
    pub accuracy: Option<f64>,
    pub accuracy_excluding_h2ps: Option<f64>,
    pub h2ps_total: usize,
    pub h2ps_median_per_slice: Option<u64>,
    pub mean_executions_per_h2p_per_slice: Option<f64>,
    pub mean_h2p_misprediction_fraction: Option<f64>,
    pub h2ps: Vec<String>,
}

pub fn summarize(stream: &MispredictionStream, slices: &[SliceStats], report: &H2PReport) -> TraceSummary {
    let per_ip = merge_slices(slices);
    let averaged = report.averaged_slices();
    let idx: BTreeSet<u64> = averaged.iter().map(|s| s.index).collect();
    let per_slice_static: Vec<u64> = slices.iter().filter(|s| idx.contains(&s.index)).map(|s| s.per_ip.len() as u64).collect();
    let execs_per_h2p = mean(
        averaged
            .iter()
            .flat_map(|s| {
                let st = &slices[s.index as usize];
                s.h2ps.iter().map(move |ip| st.per_ip[ip].executions as f64)
            })
            .collect::<Vec<_>>(),
    );
    TraceSummary {
        instructions: stream.instructions,
        cond_executions: stream.len() as u64,
        slices: slices.len(),
        full_slices: slices.iter().filter(|s| !s.partial).count(),
        static_branches_total: per_ip.len(),
        static_branches_median_per_slice: median_u64(per_slice_static),
        accuracy: stream.accuracy(),
        accuracy_excluding_h2ps: accuracy_excluding(&per_ip, &report.union),
        h2ps_total: report.union.len(),
        h2ps_median_per_slice: median_u64(averaged.iter().map(|s| s.h2ps.len() as u64).collect()),
        mean_executions_per_h2p_per_slice: execs_per_h2p,
        mean_h2p_misprediction_fraction: report.mean_h2p_fraction(),
        h2ps: report.union.iter().map(|ip| format!("{ip:#x}")).collect(),
    }
}

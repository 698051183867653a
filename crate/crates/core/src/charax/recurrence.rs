use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::Serialize;

use crate::trace::BranchTrace;

/// Decade boundaries 10^0 ..= 10^8.
pub const DECADES: usize = 9;

/// Bin `k` holds intervals in `[10^k, 10^(k+1))`; the last bin is open.
pub fn decade_bin(interval: u64) -> usize {
    debug_assert!(interval > 0);
    (interval.ilog10() as usize).min(DECADES - 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IpRecurrence {
    pub executions: u64,
    /// Lower-middle median; `None` for a branch executed once.
    pub median_interval: Option<u64>,
    /// Interval counts per decade bin.
    pub histogram: [u64; DECADES],
}

impl IpRecurrence {
    pub fn median_bin(&self) -> Option<usize> {
        self.median_interval.map(decade_bin)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecurrenceReport {
    pub per_ip: BTreeMap<u64, IpRecurrence>,
    /// Ips executed exactly once.
    pub singletons: Vec<u64>,
}

impl RecurrenceReport {
    /// Count of ips whose median falls in each decade bin.
    pub fn median_histogram(&self) -> [u64; DECADES] {
        let mut h = [0; DECADES];
        for r in self.per_ip.values() {
            if let Some(b) = r.median_bin() {
                h[b] += 1;
            }
        }
        h
    }

    /// `ip,executions,median_interval,decade_bin`; singletons have empty
    /// median and bin fields.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "ip,executions,median_interval,decade_bin")?;
        for (ip, r) in &self.per_ip {
            match r.median_interval {
                Some(m) => writeln!(out, "{ip:#x},{},{m},{}", r.executions, decade_bin(m))?,
                None => writeln!(out, "{ip:#x},{},,", r.executions)?,
            }
        }
        Ok(())
    }
}

/// Gaps in instructions between consecutive executions of each conditional
/// branch ip.
pub fn recurrence_intervals(trace: &BranchTrace) -> RecurrenceReport {
    let mut gaps: BTreeMap<u64, (u64, Vec<u64>)> = BTreeMap::new();
    for r in trace.cond_records() {
        match gaps.get_mut(&r.ip) {
            Some((last, v)) => {
                v.push(r.seq - *last);
                *last = r.seq;
            }
            None => {
                gaps.insert(r.ip, (r.seq, Vec::new()));
            }
        }
    }
    let mut report = RecurrenceReport { per_ip: BTreeMap::new(), singletons: Vec::new() };
    for (ip, (_, mut v)) in gaps {
        let mut histogram = [0; DECADES];
        for &g in &v {
            histogram[decade_bin(g)] += 1;
        }
        let median_interval = if v.is_empty() {
            report.singletons.push(ip);
            None
        } else {
            let mid = (v.len() - 1) / 2;
            Some(*v.select_nth_unstable(mid).1)
        };
        report.per_ip.insert(ip, IpRecurrence { executions: v.len() as u64 + 1, median_interval, histogram });
    }
    report
}

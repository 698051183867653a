use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::Serialize;

use super::DepError;
use crate::trace::InstrTrace;

pub const DEFAULT_TRACKED_REGS: std::ops::Range<u8> = 0..18;
pub const DEFAULT_VALUE_MASK: u64 = 0xffff_ffff;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValueCounts {
    pub count: u64,
    /// Executions of the branch that were taken after this value.
    pub taken: u64,
}

/// Latest (register, masked value) writes seen before each execution of a
/// branch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegValueHistogram {
    pub h2p_ip: u64,
    pub registers: Vec<u8>,
    pub mask: u64,
    pub executions: u64,
    pub values: BTreeMap<(u8, u64), ValueCounts>,
}

impl RegValueHistogram {
    pub fn count(&self, reg: u8, value: u64) -> u64 {
        self.values.get(&(reg, value)).map_or(0, |c| c.count)
    }

    /// Distinct values observed for `reg`.
    pub fn support(&self, reg: u8) -> usize {
        self.values.range((reg, 0)..=(reg, u64::MAX)).count()
    }

    /// Taken rates of the executions whose `reg` value does and does not
    /// satisfy `pred`; `None` for an empty side.
    pub fn taken_rate_split(&self, reg: u8, pred: impl Fn(u64) -> bool) -> (Option<f64>, Option<f64>) {
        let mut sides = [(0u64, 0u64); 2];
        for (&(_, v), c) in self.values.range((reg, 0)..=(reg, u64::MAX)) {
            let s = &mut sides[usize::from(!pred(v))];
            s.0 += c.count;
            s.1 += c.taken;
        }
        let rate = |(n, t): (u64, u64)| (n > 0).then(|| t as f64 / n as f64);
        (rate(sides[0]), rate(sides[1]))
    }
}

pub fn regval_snapshots(trace: &InstrTrace, h2p_ip: u64, registers: &[u8], mask: u64) -> Result<RegValueHistogram, DepError> {
    if registers.is_empty() {
        return Err(DepError::Argument("tracked register list is empty".into()));
    }
    let mut latest: BTreeMap<u8, u64> = BTreeMap::new();
    let mut h = RegValueHistogram { h2p_ip, registers: registers.to_vec(), mask, executions: 0, values: BTreeMap::new() };
    for r in &trace.records {
        if r.ip == h2p_ip && r.is_cond() {
            h.executions += 1;
            let taken = r.branch.is_some_and(|b| b.taken);
            for (&reg, &v) in &latest {
                let c = h.values.entry((reg, v)).or_default();
                c.count += 1;
                c.taken += u64::from(taken);
            }
        }
        for &(reg, v) in &r.regs_written {
            if registers.contains(&reg) {
                latest.insert(reg, v & mask);
            }
        }
    }
    Ok(h)
}

pub fn write_regvals_csv<W: Write>(hists: &[RegValueHistogram], mut out: W) -> io::Result<()> {
    writeln!(out, "h2p_ip,reg,value_hex,count")?;
    for h in hists {
        for (&(reg, v), c) in &h.values {
            writeln!(out, "{:#x},{},{:#x},{}", h.h2p_ip, reg, v, c.count)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depgraph::tests::{branch, inst};

    #[test]
    fn counts_latest_writes() {
        let mut w = inst(0, &[], &[]);
        w.regs_written = vec![(0, 5)];
        let mut w2 = w.clone();
        w2.seq = 2;
        let t = InstrTrace::from_records("IT1", vec![w, branch(1, 0xa, &[0]), w2, branch(3, 0xa, &[0])]);
        let h = regval_snapshots(&t, 0xa, &[0, 1], DEFAULT_VALUE_MASK).unwrap();
        assert_eq!(h.count(0, 5), 2);
        assert_eq!(h.values.len(), 1);
        assert_eq!(h.support(1), 0);
        assert!(regval_snapshots(&t, 0xa, &[], DEFAULT_VALUE_MASK).is_err());
    }

    #[test]
    fn mask_applies() {
        let mut w = inst(0, &[], &[]);
        w.regs_written = vec![(2, u64::MAX)];
        let t = InstrTrace::from_records("IT1", vec![w, branch(1, 0xa, &[2])]);
        let h = regval_snapshots(&t, 0xa, &[2], DEFAULT_VALUE_MASK).unwrap();
        assert_eq!(h.count(2, 0xffff_ffff), 1);
    }
}

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{BranchPredictor, Provider};
use crate::trace::BranchTrace;

/// Prediction outcome of one conditional branch execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Outcome {
    pub seq: u64,
    pub ip: u64,
    pub predicted: bool,
    pub actual: bool,
    pub provider: Provider,
}

impl Outcome {
    pub fn mispredicted(&self) -> bool {
        self.predicted != self.actual
    }
}

/// One [`Outcome`] per conditional record of a simulated trace, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct MispredictionStream {
    /// Instruction count of the simulated trace.
    pub instructions: u64,
    pub outcomes: Vec<Outcome>,
}

impl MispredictionStream {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn mispredictions(&self) -> u64 {
        self.outcomes.iter().filter(|o| o.mispredicted()).count() as u64
    }

    /// Fraction predicted correctly; `None` for an empty stream.
    pub fn accuracy(&self) -> Option<f64> {
        if self.outcomes.is_empty() {
            return None;
        }
        Some(1.0 - self.mispredictions() as f64 / self.outcomes.len() as f64)
    }

    /// Accuracy restricted to executions of `ip`.
    pub fn accuracy_of(&self, ip: u64) -> Option<f64> {
        let (n, wrong) = self
            .outcomes
            .iter()
            .filter(|o| o.ip == ip)
            .fold((0u64, 0u64), |(n, w), o| (n + 1, w + u64::from(o.mispredicted())));
        (n > 0).then(|| 1.0 - wrong as f64 / n as f64)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "seq,ip_hex,predicted,actual,provider")?;
        for o in &self.outcomes {
            writeln!(
                out,
                "{},{:#x},{},{},{}",
                o.seq,
                o.ip,
                u8::from(o.predicted),
                u8::from(o.actual),
                o.provider
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

/// Runs `predictor` over every branch of `trace`: predict then update for
/// each conditional record, update only for the rest.
pub fn simulate<P: BranchPredictor + ?Sized>(trace: &BranchTrace, predictor: &mut P) -> MispredictionStream {
    let mut outcomes = Vec::with_capacity(trace.meta.cond_branches as usize);
    for r in &trace.records {
        if r.is_cond() {
            let p = predictor.predict(r.ip);
            outcomes.push(Outcome { seq: r.seq, ip: r.ip, predicted: p.taken, actual: r.taken, provider: p.provider });
        }
        predictor.update(r);
    }
    MispredictionStream { instructions: trace.meta.instructions, outcomes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::{AlwaysTaken, Bimodal};
    use crate::trace::{BranchKind, BranchRecord};

    #[test]
    fn empty_trace_gives_empty_stream() {
        let t = BranchTrace::from_records("BT1", vec![BranchRecord { seq: 0, ip: 4, kind: BranchKind::Call, target: 8, taken: true }]);
        let s = simulate(&t, &mut Bimodal::new(16));
        assert!(s.is_empty());
        assert_eq!(s.accuracy(), None);
    }

    #[test]
    fn csv_layout() {
        let t = BranchTrace::from_records("BT1", vec![BranchRecord::cond(12, 0x400a10, 0x400a40, false)]);
        let s = simulate(&t, &mut AlwaysTaken);
        assert_eq!(String::from_utf8(s.to_csv()).unwrap(), "seq,ip_hex,predicted,actual,provider\n12,0x400a10,1,0,static\n");
    }
}

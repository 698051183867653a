use super::counter::SaturatingCounter;
use super::{hash_of, BranchPredictor, Prediction, Provider};
use crate::trace::BranchRecord;

/// Predicts taken for every branch.
#[derive(Debug, Clone, Copy, Default, Hash)]
pub struct AlwaysTaken;

impl BranchPredictor for AlwaysTaken {
    fn name(&self) -> String {
        "always-taken".into()
    }

    fn predict(&self, _ip: u64) -> Prediction {
        Prediction::new(true, 3, Provider::Static)
    }

    fn update(&mut self, _record: &BranchRecord) {}

    fn fingerprint(&self) -> u64 {
        0
    }

    fn storage_bytes(&self) -> u64 {
        0
    }
}

pub(crate) fn pc_index(ip: u64, mask: usize) -> usize {
    ((ip >> 2) ^ (ip >> 14)) as usize & mask
}

/// Table of 2-bit counters indexed by ip.
#[derive(Debug, Clone, Hash)]
pub struct Bimodal {
    table: Vec<SaturatingCounter>,
}

impl Bimodal {
    pub fn new(entries: usize) -> Self {
        assert!(entries.is_power_of_two());
        Bimodal { table: vec![SaturatingCounter::weak_not_taken(2); entries] }
    }

    fn index(&self, ip: u64) -> usize {
        pc_index(ip, self.table.len() - 1)
    }

    pub fn counter(&self, ip: u64) -> SaturatingCounter {
        self.table[self.index(ip)]
    }

    pub fn train(&mut self, ip: u64, taken: bool) {
        let i = self.index(ip);
        self.table[i].train(taken);
    }

    pub fn entries(&self) -> usize {
        self.table.len()
    }
}

impl BranchPredictor for Bimodal {
    fn name(&self) -> String {
        format!("bimodal:{}", self.table.len())
    }

    fn predict(&self, ip: u64) -> Prediction {
        let c = self.counter(ip);
        Prediction::new(c.taken(), c.confidence(), Provider::Bimodal)
    }

    fn update(&mut self, record: &BranchRecord) {
        if record.is_cond() {
            self.train(record.ip, record.taken);
        }
    }

    fn fingerprint(&self) -> u64 {
        hash_of(self)
    }

    fn storage_bytes(&self) -> u64 {
        self.table.len() as u64 * 2 / 8
    }

    fn check_invariants(&self) -> Result<(), String> {
        match self.table.iter().find(|c| !c.in_bounds()) {
            Some(c) => Err(format!("bimodal counter out of range: {c:?}")),
            None => Ok(()),
        }
    }
}

/// Global-history XOR ip indexed 2-bit counters.
#[derive(Debug, Clone, Hash)]
pub struct Gshare {
    table: Vec<SaturatingCounter>,
    history: u64,
    history_bits: u32,
}

impl Gshare {
    pub fn new(entries: usize, history_bits: u32) -> Self {
        assert!(entries.is_power_of_two());
        Gshare { table: vec![SaturatingCounter::weak_not_taken(2); entries], history: 0, history_bits: history_bits.min(64) }
    }

    fn index(&self, ip: u64) -> usize {
        let hmask = if self.history_bits == 64 { u64::MAX } else { (1u64 << self.history_bits) - 1 };
        let h = self.history & hmask;
        let folded = h ^ (h >> 20) ^ (h >> 40);
        ((ip >> 2) ^ folded) as usize & (self.table.len() - 1)
    }
}

impl BranchPredictor for Gshare {
    fn name(&self) -> String {
        format!("gshare:{}", self.table.len())
    }

    fn predict(&self, ip: u64) -> Prediction {
        let c = self.table[self.index(ip)];
        Prediction::new(c.taken(), c.confidence(), Provider::Gshare)
    }

    fn update(&mut self, record: &BranchRecord) {
        if !record.is_cond() {
            return;
        }
        let i = self.index(record.ip);
        self.table[i].train(record.taken);
        self.history = (self.history << 1) | u64::from(record.taken);
    }

    fn fingerprint(&self) -> u64 {
        hash_of(self)
    }

    fn storage_bytes(&self) -> u64 {
        self.table.len() as u64 * 2 / 8
    }
}

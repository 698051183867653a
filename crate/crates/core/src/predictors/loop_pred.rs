use serde::{Deserialize, Serialize};

use super::ConfigError;

const CONF_MAX: u8 = 3;
const AGE_BITS: u8 = 4;
const AGE_MAX: u8 = (1 << AGE_BITS) - 1;
const AGE_INIT: u8 = 7;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    #[serde(default = "d_entries")]
    pub entries: usize,
    #[serde(default = "d_ways")]
    pub ways: usize,
    #[serde(default = "d_tag")]
    pub tag_bits: u8,
    #[serde(default = "d_iter")]
    pub iter_bits: u8,
}

fn d_entries() -> usize {
    64
}
fn d_ways() -> usize {
    4
}
fn d_tag() -> u8 {
    10
}
fn d_iter() -> u8 {
    10
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig { entries: d_entries(), ways: d_ways(), tag_bits: d_tag(), iter_bits: d_iter() }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ways == 0 || !self.entries.is_multiple_of(self.ways) || !(self.entries / self.ways).is_power_of_two() {
            return Err(ConfigError::Invalid("loop entries must be ways x power-of-two sets".into()));
        }
        if !(1..=16).contains(&self.tag_bits) || !(2..=16).contains(&self.iter_bits) {
            return Err(ConfigError::Invalid("loop field widths out of range".into()));
        }
        Ok(())
    }

    pub fn entry_bits(&self) -> u64 {
        u64::from(self.tag_bits) + 2 * u64::from(self.iter_bits) + 2 + u64::from(AGE_BITS)
    }

    pub fn storage_bits(&self) -> u64 {
        self.entries as u64 * self.entry_bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LoopEntry {
    pub valid: bool,
    pub tag: u16,
    /// Taken iterations seen in the running instance.
    pub current: u16,
    /// Trip count (taken iterations plus the exit) of the last instance.
    pub past: u16,
    pub confidence: u8,
    pub age: u8,
}

impl LoopEntry {
    /// Confident prediction for the next execution, if any.
    pub fn prediction(&self) -> Option<bool> {
        (self.valid && self.confidence == CONF_MAX && self.past > 0).then(|| self.current + 1 != self.past)
    }
}

/// Set-associative table of loop trip counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LoopPredictor {
    config: LoopConfig,
    sets: usize,
    entries: Vec<LoopEntry>,
}

impl LoopPredictor {
    pub fn new(config: LoopConfig) -> Self {
        let sets = config.entries / config.ways;
        LoopPredictor { entries: vec![LoopEntry::default(); config.entries], sets, config }
    }

    fn set_and_tag(&self, ip: u64) -> (usize, u16) {
        let pc = ip >> 2;
        let set = (pc as usize) & (self.sets - 1);
        let tag = ((pc >> self.sets.trailing_zeros()) & ((1 << self.config.tag_bits) - 1)) as u16;
        (set, tag)
    }

    fn find(&self, ip: u64) -> Option<usize> {
        let (set, tag) = self.set_and_tag(ip);
        let base = set * self.config.ways;
        (base..base + self.config.ways).find(|&i| self.entries[i].valid && self.entries[i].tag == tag)
    }

    pub fn entry(&self, ip: u64) -> Option<&LoopEntry> {
        self.find(ip).map(|i| &self.entries[i])
    }

    pub fn predict(&self, ip: u64) -> Option<bool> {
        self.entry(ip).and_then(LoopEntry::prediction)
    }

    /// `mispredicted` refers to the final ensemble prediction and gates
    /// allocation of new entries.
    pub fn update(&mut self, ip: u64, taken: bool, mispredicted: bool) {
        let iter_max = (1u32 << self.config.iter_bits) - 1;
        if let Some(i) = self.find(ip) {
            let e = &mut self.entries[i];
            let predicted = e.prediction();
            if let Some(p) = predicted {
                if p == taken {
                    e.age = (e.age + 1).min(AGE_MAX);
                }
            }
            if taken {
                e.current += 1;
                if u32::from(e.current) >= iter_max {
                    *e = LoopEntry::default();
                    return;
                }
                if e.past > 0 && e.current >= e.past {
                    e.confidence = 0;
                }
            } else {
                let trip = e.current + 1;
                if trip == e.past {
                    e.confidence = (e.confidence + 1).min(CONF_MAX);
                } else {
                    e.past = trip;
                    e.confidence = if predicted.is_some() { 0 } else { 1 };
                }
                e.current = 0;
            }
            return;
        }
        if !mispredicted {
            return;
        }
        let (set, tag) = self.set_and_tag(ip);
        let base = set * self.config.ways;
        let ways = base..base + self.config.ways;
        match ways.clone().find(|&i| !self.entries[i].valid || self.entries[i].age == 0) {
            Some(i) => {
                self.entries[i] = LoopEntry {
                    valid: true,
                    tag,
                    current: u16::from(taken),
                    past: 0,
                    confidence: 0,
                    age: AGE_INIT,
                }
            }
            None => {
                for i in ways {
                    self.entries[i].age -= 1;
                }
            }
        }
    }

    pub fn check(&self) -> Result<(), String> {
        match self.entries.iter().find(|e| e.confidence > CONF_MAX || e.age > AGE_MAX) {
            Some(e) => Err(format!("loop entry out of range: {e:?}")),
            None => Ok(()),
        }
    }
}

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::counter::SaturatingCounter;
use super::history::{FoldedHistory, GlobalHistory};
use super::simple::Bimodal;
use super::{hash_of, BranchPredictor, ConfigError, Prediction, Provider, StateRng};
use crate::trace::BranchRecord;

pub const MAX_TABLES: usize = 20;
const CTR_BITS: u8 = 3;
const U_MAX: u8 = 3;
const USEFUL_BITS: u64 = 2;
/// Provider entries younger than this many updates defer to the alternate
/// prediction while their counter is weak.
const FRESH_UPDATES: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TageConfig {
    #[serde(default = "d_tables")]
    pub num_tables: usize,
    #[serde(default = "d_min_hist")]
    pub min_hist: usize,
    #[serde(default = "d_max_hist")]
    pub max_hist: usize,
    /// log2 of entries per tagged table.
    #[serde(default = "d_log_entries")]
    pub log_entries: u32,
    /// Per-table tag widths; defaults to `8 + i / 2` capped at 12.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_widths: Option<Vec<u8>>,
    /// log2 of base bimodal entries.
    #[serde(default = "d_base_log")]
    pub base_log_entries: u32,
}

fn d_tables() -> usize {
    12
}
fn d_min_hist() -> usize {
    4
}
fn d_max_hist() -> usize {
    1000
}
fn d_log_entries() -> u32 {
    8
}
fn d_base_log() -> u32 {
    12
}

impl Default for TageConfig {
    fn default() -> Self {
        TageConfig {
            num_tables: d_tables(),
            min_hist: d_min_hist(),
            max_hist: d_max_hist(),
            log_entries: d_log_entries(),
            tag_widths: None,
            base_log_entries: d_base_log(),
        }
    }
}

impl TageConfig {
    /// Geometric history lengths `round(min_hist * r^i)`, forced strictly
    /// increasing, with the last equal to `max_hist`.
    pub fn history_lengths(&self) -> Vec<usize> {
        let n = self.num_tables;
        if n == 1 {
            return vec![self.max_hist];
        }
        let r = (self.max_hist as f64 / self.min_hist as f64).powf(1.0 / (n - 1) as f64);
        let mut out: Vec<usize> = Vec::with_capacity(n);
        for i in 0..n {
            let mut l = (self.min_hist as f64 * r.powi(i as i32)).round() as usize;
            if let Some(&prev) = out.last() {
                l = l.max(prev + 1);
            }
            out.push(l);
        }
        out[n - 1] = self.max_hist;
        out
    }

    pub fn tag_widths(&self) -> Vec<u8> {
        match &self.tag_widths {
            Some(w) => w.clone(),
            None => (0..self.num_tables).map(|i| (8 + i / 2).min(12) as u8).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.num_tables == 0 || self.num_tables > MAX_TABLES {
            return bad(format!("num_tables must be in 1..={MAX_TABLES}"));
        }
        if self.min_hist == 0 || (self.num_tables > 1 && self.max_hist <= self.min_hist) {
            return bad("need 1 <= min_hist < max_hist".into());
        }
        if self.max_hist > 1 << 16 {
            return bad("max_hist too large".into());
        }
        if !(1..=24).contains(&self.log_entries) || !(1..=28).contains(&self.base_log_entries) {
            return bad("table sizes out of range".into());
        }
        let lengths = self.history_lengths();
        if lengths.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("history lengths not increasing: {lengths:?}"));
        }
        let tags = self.tag_widths();
        if tags.len() != self.num_tables || tags.iter().any(|&w| !(2..=16).contains(&w)) {
            return bad("one tag width in 2..=16 per table required".into());
        }
        Ok(())
    }

    pub fn storage_bits(&self) -> u64 {
        let entries = 1u64 << self.log_entries;
        let tagged: u64 = self
            .tag_widths()
            .iter()
            .map(|&t| entries * (u64::from(t) + u64::from(CTR_BITS) + USEFUL_BITS))
            .sum();
        tagged + (1u64 << self.base_log_entries) * 2
    }

    pub fn storage_bytes(&self) -> u64 {
        self.storage_bits() / 8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct TaggedEntry {
    valid: bool,
    tag: u16,
    ctr: SaturatingCounter,
    u: u8,
    /// Updates since allocation, saturating at `FRESH_UPDATES`.
    fresh: u8,
}

impl TaggedEntry {
    fn empty() -> Self {
        TaggedEntry { valid: false, tag: 0, ctr: SaturatingCounter::weak_not_taken(CTR_BITS), u: 0, fresh: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize)]
pub struct IpAllocations {
    pub total: u64,
    /// `(table, row)` pairs ever allocated for this ip.
    pub unique: BTreeSet<(u8, u32)>,
}

impl IpAllocations {
    /// Allocations per distinct entry.
    pub fn ratio(&self) -> f64 {
        if self.unique.is_empty() {
            0.0
        } else {
            self.total as f64 / self.unique.len() as f64
        }
    }
}

/// Per-ip record of tagged-table allocations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct AllocationTelemetry {
    per_ip: BTreeMap<u64, IpAllocations>,
}

impl AllocationTelemetry {
    pub fn record(&mut self, ip: u64, table: u8, row: u32) {
        let e = self.per_ip.entry(ip).or_default();
        e.total += 1;
        e.unique.insert((table, row));
    }

    pub fn get(&self, ip: u64) -> Option<&IpAllocations> {
        self.per_ip.get(&ip)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &IpAllocations)> {
        self.per_ip.iter().map(|(&ip, a)| (ip, a))
    }

    pub fn total_allocations(&self) -> u64 {
        self.per_ip.values().map(|a| a.total).sum()
    }

    pub fn check(&self) -> Result<(), String> {
        for (ip, a) in &self.per_ip {
            if a.unique.len() as u64 > a.total {
                return Err(format!("ip {ip:#x}: {} unique entries > {} allocations", a.unique.len(), a.total));
            }
        }
        Ok(())
    }
}

/// Result of looking up one ip in all TAGE components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TageLookup {
    pub indices: [u32; MAX_TABLES],
    pub tags: [u16; MAX_TABLES],
    /// Longest matching tagged table.
    pub provider: Option<usize>,
    /// Next longest match below the provider.
    pub alt: Option<usize>,
    pub provider_taken: bool,
    pub alt_taken: bool,
    pub provider_conf: u8,
    pub alt_conf: u8,
    pub used_alt: bool,
    pub taken: bool,
}

impl TageLookup {
    pub fn confidence(&self) -> u8 {
        if self.used_alt {
            self.alt_conf
        } else {
            self.provider_conf
        }
    }

    /// The component whose prediction was used.
    pub fn source(&self) -> Provider {
        let src = if self.used_alt { self.alt } else { self.provider };
        match src {
            Some(i) => Provider::Tagged(i as u8),
            None => Provider::Base,
        }
    }

    pub fn prediction(&self) -> Prediction {
        Prediction::new(self.taken, self.confidence(), self.source())
    }
}

/// Tagged geometric-history predictor with a bimodal base table.
#[derive(Debug, Clone, Hash)]
pub struct Tage {
    config: TageConfig,
    lengths: Vec<usize>,
    tag_widths: Vec<u8>,
    tables: Vec<Vec<TaggedEntry>>,
    base: Bimodal,
    hist: GlobalHistory,
    idx_fold: Vec<FoldedHistory>,
    tag_fold0: Vec<FoldedHistory>,
    tag_fold1: Vec<FoldedHistory>,
    rng: StateRng,
    telemetry: AllocationTelemetry,
}

impl Tage {
    /// Panics on an invalid config; use [`TageConfig::validate`] first.
    pub fn new(config: TageConfig, seed: u64) -> Self {
        config.validate().expect("invalid TAGE config");
        let lengths = config.history_lengths();
        let tag_widths = config.tag_widths();
        let entries = 1usize << config.log_entries;
        let lg = config.log_entries;
        Tage {
            tables: vec![vec![TaggedEntry::empty(); entries]; config.num_tables],
            base: Bimodal::new(1 << config.base_log_entries),
            hist: GlobalHistory::new(config.max_hist),
            idx_fold: lengths.iter().map(|&l| FoldedHistory::new(l, lg)).collect(),
            tag_fold0: lengths.iter().zip(&tag_widths).map(|(&l, &w)| FoldedHistory::new(l, u32::from(w))).collect(),
            tag_fold1: lengths
                .iter()
                .zip(&tag_widths)
                .map(|(&l, &w)| FoldedHistory::new(l, u32::from(w) - 1))
                .collect(),
            rng: StateRng::new(seed),
            telemetry: AllocationTelemetry::default(),
            lengths,
            tag_widths,
            config,
        }
    }

    pub fn config(&self) -> &TageConfig {
        &self.config
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn history(&self) -> &GlobalHistory {
        &self.hist
    }

    pub fn allocation_telemetry(&self) -> &AllocationTelemetry {
        &self.telemetry
    }

    fn index(&self, i: usize, pc: u64) -> u32 {
        let lg = self.config.log_entries;
        let mask = (1u64 << lg) - 1;
        let plen = self.lengths[i].min(16);
        let mut p = u64::from(self.hist.path_bits()) & ((1u64 << plen) - 1);
        let mut pm = 0u64;
        while p != 0 {
            pm ^= p & mask;
            p >>= lg;
        }
        pm = ((pm << (i as u32 % lg)) | (pm >> (lg - i as u32 % lg))) & mask;
        let shift = (lg as i64 - i as i64).unsigned_abs() as u32 + 1;
        ((pc ^ (pc >> shift) ^ u64::from(self.idx_fold[i].value()) ^ pm) & mask) as u32
    }

    fn tag(&self, i: usize, pc: u64) -> u16 {
        let mask = (1u64 << self.tag_widths[i]) - 1;
        let mixed = (u64::from(self.tag_fold1[i].value()) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 40;
        let v = pc ^ (pc >> 11) ^ u64::from(self.tag_fold0[i].value()) ^ mixed;
        (v & mask) as u16
    }

    pub fn lookup(&self, ip: u64) -> TageLookup {
        let pc = ip >> 2;
        let mut indices = [0u32; MAX_TABLES];
        let mut tags = [0u16; MAX_TABLES];
        let mut provider = None;
        let mut alt = None;
        for i in (0..self.tables.len()).rev() {
            indices[i] = self.index(i, pc);
            tags[i] = self.tag(i, pc);
            let e = &self.tables[i][indices[i] as usize];
            if e.valid && e.tag == tags[i] {
                if provider.is_none() {
                    provider = Some(i);
                } else if alt.is_none() {
                    alt = Some(i);
                }
            }
        }
        let base = self.base.counter(ip);
        let read = |slot: Option<usize>| match slot {
            Some(i) => {
                let c = self.tables[i][indices[i] as usize].ctr;
                (c.taken(), c.confidence())
            }
            None => (base.taken(), base.confidence()),
        };
        let (provider_taken, provider_conf) = read(provider);
        let (alt_taken, alt_conf) = read(alt);
        let used_alt = provider.is_some_and(|p| {
            let e = &self.tables[p][indices[p] as usize];
            e.fresh < FRESH_UPDATES && e.ctr.is_weak()
        });
        let taken = if used_alt { alt_taken } else { provider_taken };
        TageLookup {
            indices,
            tags,
            provider,
            alt,
            provider_taken,
            alt_taken,
            provider_conf,
            alt_conf,
            used_alt,
            taken,
        }
    }

    /// Trains on a conditional outcome given the lookup made for it, then
    /// shifts the outcome into the history.
    pub fn train(&mut self, ip: u64, taken: bool, lk: &TageLookup) {
        match lk.provider {
            Some(p) => {
                let e = &mut self.tables[p][lk.indices[p] as usize];
                if lk.provider_taken != lk.alt_taken {
                    if lk.provider_taken == taken {
                        e.u = (e.u + 1).min(U_MAX);
                    } else {
                        e.u = e.u.saturating_sub(1);
                    }
                }
                e.ctr.train(taken);
                e.fresh = (e.fresh + 1).min(FRESH_UPDATES);
            }
            None => self.base.train(ip, taken),
        }
        if lk.taken != taken {
            self.allocate(ip, taken, lk);
        }
        self.push_history(ip, taken);
    }

    fn allocate(&mut self, ip: u64, taken: bool, lk: &TageLookup) {
        let start = lk.provider.map_or(0, |p| p + 1);
        let n = self.tables.len();
        let mut candidates = [0usize; MAX_TABLES];
        let mut count = 0;
        for j in start..n {
            if self.tables[j][lk.indices[j] as usize].u == 0 {
                candidates[count] = j;
                count += 1;
            }
        }
        if count == 0 {
            for j in start..n {
                let e = &mut self.tables[j][lk.indices[j] as usize];
                e.u = e.u.saturating_sub(1);
            }
            return;
        }
        let first = if count >= 2 && self.rng.0.random_bool(0.5) { 1 } else { 0 };
        let want = if lk.provider.is_some() { 2 } else { 1 };
        for &j in candidates[first..count].iter().take(want) {
            let row = lk.indices[j];
            self.tables[j][row as usize] = TaggedEntry {
                valid: true,
                tag: lk.tags[j],
                ctr: SaturatingCounter::weak(CTR_BITS, taken),
                u: 0,
                fresh: 0,
            };
            self.telemetry.record(ip, j as u8, row);
        }
    }

    fn push_history(&mut self, ip: u64, taken: bool) {
        for i in 0..self.tables.len() {
            let out = self.hist.get(self.lengths[i] - 1);
            self.idx_fold[i].push(taken, out);
            self.tag_fold0[i].push(taken, out);
            self.tag_fold1[i].push(taken, out);
        }
        self.hist.push_direction(taken);
        self.hist.push_path(ip);
    }

    /// Non-conditional branches only advance path history.
    pub fn observe_other(&mut self, ip: u64) {
        self.hist.push_path(ip);
    }

    pub fn check_tables(&self) -> Result<(), String> {
        for (i, t) in self.tables.iter().enumerate() {
            if let Some(e) = t.iter().find(|e| !e.ctr.in_bounds() || e.u > U_MAX || e.fresh > FRESH_UPDATES) {
                return Err(format!("table {i}: entry out of bounds {e:?}"));
            }
        }
        self.base.check_invariants()?;
        self.telemetry.check()
    }
}

impl BranchPredictor for Tage {
    fn name(&self) -> String {
        format!("tage:{}x{}", self.tables.len(), 1usize << self.config.log_entries)
    }

    fn predict(&self, ip: u64) -> Prediction {
        self.lookup(ip).prediction()
    }

    fn update(&mut self, record: &BranchRecord) {
        if record.is_cond() {
            let lk = self.lookup(record.ip);
            self.train(record.ip, record.taken, &lk);
        } else {
            self.observe_other(record.ip);
        }
    }

    fn fingerprint(&self) -> u64 {
        hash_of(self)
    }

    fn storage_bytes(&self) -> u64 {
        self.config.storage_bytes()
    }

    fn telemetry(&self) -> Option<&AllocationTelemetry> {
        Some(&self.telemetry)
    }

    fn check_invariants(&self) -> Result<(), String> {
        self.check_tables()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> TageConfig {
        TageConfig { num_tables: 4, min_hist: 4, max_hist: 32, log_entries: 2, tag_widths: None, base_log_entries: 4 }
    }

    #[test]
    fn default_lengths_are_geometric() {
        let l = TageConfig::default().history_lengths();
        assert_eq!(l, vec![4, 7, 11, 18, 30, 49, 81, 134, 222, 366, 605, 1000]);
        let c = TageConfig { max_hist: 3000, ..TageConfig::default() };
        assert_eq!(*c.history_lengths().last().unwrap(), 3000);
    }

    #[test]
    fn default_tag_widths() {
        assert_eq!(TageConfig::default().tag_widths(), vec![8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 12, 12]);
    }

    #[test]
    fn one_table_storage_arithmetic() {
        let c = TageConfig {
            num_tables: 1,
            min_hist: 4,
            max_hist: 4,
            log_entries: 10,
            tag_widths: Some(vec![9]),
            base_log_entries: 12,
        };
        assert_eq!(c.storage_bytes(), 1792 + 1024);
    }

    #[test]
    fn first_base_misprediction_allocates_one_entry() {
        let mut t = Tage::new(toy(), 1);
        let ip = 0x400a10;
        let lk = t.lookup(ip);
        assert_eq!(lk.provider, None);
        assert!(!lk.taken);
        t.update(&BranchRecord::cond(0, ip, 0, true));
        let a = t.allocation_telemetry().get(ip).unwrap();
        assert_eq!(a.total, 1);
        assert_eq!(a.unique.len(), 1);
    }

    #[test]
    fn learns_tttn_on_toy_config() {
        let mut t = Tage::new(toy(), 7);
        let pattern = [true, true, true, false];
        let ip = 0x1230;
        let mut seq = 0;
        for k in 0..1000 {
            t.update(&BranchRecord::cond(seq, ip, 0, pattern[k % 4]));
            seq += 1;
        }
        for k in 1000..1100 {
            let actual = pattern[k % 4];
            assert_eq!(t.predict(ip).taken, actual, "execution {k}");
            t.update(&BranchRecord::cond(seq, ip, 0, actual));
            seq += 1;
        }
    }

    #[test]
    fn predict_is_pure() {
        let mut t = Tage::new(toy(), 3);
        for s in 0..50 {
            t.update(&BranchRecord::cond(s, 0x40 + 4 * (s % 3), 0, s % 5 == 0));
        }
        let before = t.fingerprint();
        for ip in 0..64 {
            t.predict(ip * 4);
        }
        assert_eq!(before, t.fingerprint());
    }
}

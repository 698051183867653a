//! Seeded synthetic trace generator.
//!
//! A [`SyntheticProgramSpec`] plants a set of branch behaviors. At every step
//! the generator picks one behavior by weight, emits a run of filler
//! instructions followed by that behavior's branch (or, for loops, a whole
//! loop instance), and records the outcome in its own global history. The
//! returned [`PlantedManifest`] is the ground truth for downstream analyses.

use std::collections::{BTreeMap, VecDeque};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Geometric, Zipf};
use serde::{Deserialize, Serialize};

use super::record::{BranchInfo, BranchKind, BranchRecord, BranchTrace, InstrTrace, InstructionRecord, TraceMeta};
use super::TraceError;

/// Registers `0..32` are reserved for planted driver registers; filler
/// instructions use `32..64`.
pub const DRIVER_REGS: std::ops::Range<u8> = 0..32;
pub const FILLER_REGS: std::ops::Range<u8> = 32..64;
/// Address range used for the non-conditional branches sprinkled in by
/// `other_branch_rate`.
pub const OTHER_BRANCH_BASE: u64 = 0x0f00_0000;
const OTHER_BRANCH_SITES: u64 = 16;
const HEAP_BASE: u64 = 0x7000_0000;
const HEAP_WORDS: u64 = 256;
/// Maximum history position a `HistoryCorrelated` behavior may reference.
pub const MAX_CORRELATED_POSITION: u32 = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub ip: u64,
    /// Gate branch is taken iff the driver value exceeds this threshold.
    pub threshold: i64,
    /// Number of other sites emitted between the gate and the H2P, drawn
    /// uniformly from `min_gap..=max_gap`.
    pub min_gap: u32,
    pub max_gap: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    /// Direction cycles through `pattern` (`T`/`N` characters).
    Periodic { ip: u64, pattern: String },
    Biased { ip: u64, p_taken: f64 },
    /// Direction is the XOR of the global-history bits at `positions`
    /// (position 1 is the most recent conditional branch).
    HistoryCorrelated { ip: u64, positions: Vec<u32> },
    /// A reflected random walk in register `reg`; the branch is taken iff the
    /// value exceeds `threshold`. Each walk step is uniform in `-step..=step`
    /// (default `bound`) and the value stays within `-bound..=bound`.
    DataDependent {
        ip: u64,
        reg: u8,
        threshold: i64,
        bound: i64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gate: Option<Gate>,
    },
    /// Taken `trip - 1` times, then not taken once, per loop instance.
    LoopExit { ip: u64, trip: u32 },
    /// `count` static branches at `base_ip + 4 * i`, executed with zipfian
    /// frequencies. Each pool branch follows its own preferred direction with
    /// probability `bias`.
    RarePool { base_ip: u64, count: u32, exponent: f64, bias: f64 },
    /// Fires once every `period` instructions regardless of weight,
    /// alternating taken and not taken.
    Phase { ip: u64, period: u64 },
}

impl Behavior {
    fn role(&self) -> &'static str {
        match self {
            Behavior::Periodic { .. } => "periodic",
            Behavior::Biased { .. } => "biased",
            Behavior::HistoryCorrelated { .. } => "history_correlated",
            Behavior::DataDependent { .. } => "data_dependent",
            Behavior::LoopExit { .. } => "loop_exit",
            Behavior::RarePool { .. } => "rare_pool",
            Behavior::Phase { .. } => "phase",
        }
    }
}

fn default_weight() -> f64 {
    1.0
}

fn default_filler() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBehavior {
    #[serde(flatten)]
    pub behavior: Behavior,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

impl PlantedBehavior {
    pub fn new(behavior: Behavior, weight: f64) -> Self {
        PlantedBehavior { behavior, weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProgramSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub behaviors: Vec<PlantedBehavior>,
    /// When present, must equal the number of planted conditional branch
    /// ips (pool members included).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_branches: Option<u64>,
    /// Mean number of filler instructions before each branch.
    #[serde(default = "default_filler")]
    pub filler_density: f64,
    /// Probability per step of an extra non-conditional branch.
    #[serde(default)]
    pub other_branch_rate: f64,
}

impl SyntheticProgramSpec {
    pub fn new(behaviors: Vec<PlantedBehavior>) -> Self {
        SyntheticProgramSpec {
            id: None,
            behaviors,
            static_branches: None,
            filler_density: default_filler(),
            other_branch_rate: 0.0,
        }
    }

    pub fn with_filler(mut self, density: f64) -> Self {
        self.filler_density = density;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::Argument(m));
        if self.behaviors.is_empty() {
            return bad("spec has no behaviors".into());
        }
        if !(self.filler_density >= 0.0 && self.filler_density.is_finite()) {
            return bad(format!("filler_density must be >= 0, got {}", self.filler_density));
        }
        if !(0.0..=1.0).contains(&self.other_branch_rate) {
            return bad(format!("other_branch_rate must be in [0,1], got {}", self.other_branch_rate));
        }
        let mut total_weight = 0.0;
        let mut singles: Vec<u64> = Vec::new();
        let mut ranges: Vec<(u64, u64)> = Vec::new();
        for (i, pb) in self.behaviors.iter().enumerate() {
            if !(pb.weight >= 0.0 && pb.weight.is_finite()) {
                return bad(format!("behavior {i}: weight must be >= 0"));
            }
            if !matches!(pb.behavior, Behavior::Phase { .. }) {
                total_weight += pb.weight;
            }
            match &pb.behavior {
                Behavior::Periodic { ip, pattern } => {
                    if pattern.is_empty() || !pattern.chars().all(|c| c == 'T' || c == 'N') {
                        return bad(format!("behavior {i}: pattern must be a non-empty T/N string"));
                    }
                    singles.push(*ip);
                }
                Behavior::Biased { ip, p_taken } => {
                    if !(0.0..=1.0).contains(p_taken) {
                        return bad(format!("behavior {i}: p_taken must be in [0,1]"));
                    }
                    singles.push(*ip);
                }
                Behavior::HistoryCorrelated { ip, positions } => {
                    if positions.is_empty()
                        || positions.iter().any(|&p| p == 0 || p > MAX_CORRELATED_POSITION)
                    {
                        return bad(format!(
                            "behavior {i}: positions must be non-empty and within 1..={MAX_CORRELATED_POSITION}"
                        ));
                    }
                    singles.push(*ip);
                }
                Behavior::DataDependent { ip, reg, bound, step, gate, .. } => {
                    if !DRIVER_REGS.contains(reg) {
                        return bad(format!("behavior {i}: driver register must be below {}", DRIVER_REGS.end));
                    }
                    if *bound <= 0 || step.is_some_and(|s| s < 0) {
                        return bad(format!("behavior {i}: bound must be > 0 and step >= 0"));
                    }
                    singles.push(*ip);
                    if let Some(g) = gate {
                        if g.min_gap > g.max_gap {
                            return bad(format!("behavior {i}: gate min_gap > max_gap"));
                        }
                        singles.push(g.ip);
                    }
                }
                Behavior::Phase { ip, period } => {
                    if *period == 0 {
                        return bad(format!("behavior {i}: period must be >= 1"));
                    }
                    singles.push(*ip);
                }
                Behavior::LoopExit { ip, trip } => {
                    if *trip == 0 {
                        return bad(format!("behavior {i}: trip count must be >= 1"));
                    }
                    singles.push(*ip);
                }
                Behavior::RarePool { base_ip, count, exponent, bias } => {
                    if *count == 0 {
                        return bad(format!("behavior {i}: pool must contain at least one ip"));
                    }
                    if !(*exponent > 0.0 && exponent.is_finite()) {
                        return bad(format!("behavior {i}: zipf exponent must be > 0"));
                    }
                    if !(0.0..=1.0).contains(bias) {
                        return bad(format!("behavior {i}: bias must be in [0,1]"));
                    }
                    ranges.push((*base_ip, base_ip + 4 * u64::from(*count)));
                }
            }
        }
        if total_weight <= 0.0 {
            return bad("behavior weights sum to zero".into());
        }
        let mut sorted = singles.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("planted ip {:#x} is not unique", w[0]));
        }
        for &(lo, hi) in &ranges {
            if let Some(ip) = singles.iter().find(|&&ip| ip >= lo && ip < hi) {
                return bad(format!("planted ip {ip:#x} falls inside a rare pool"));
            }
        }
        ranges.sort_unstable();
        if ranges.windows(2).any(|w| w[1].0 < w[0].1) {
            return bad("rare pools overlap".into());
        }
        if let Some(n) = self.static_branches {
            let actual = singles.len() as u64 + ranges.iter().map(|(lo, hi)| (hi - lo) / 4).sum::<u64>();
            if n != actual {
                return bad(format!("static_branches = {n} but spec plants {actual}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Difficulty {
    Easy,
    H2p,
    Rare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub ip: u64,
    pub role: String,
    pub class: Difficulty,
    /// Index into the spec's behavior list.
    pub behavior: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolRange {
    pub base_ip: u64,
    pub count: u32,
    pub stride: u64,
    pub behavior: usize,
}

impl PoolRange {
    pub fn contains(&self, ip: u64) -> bool {
        ip >= self.base_ip && ip < self.base_ip + self.stride * u64::from(self.count) && (ip - self.base_ip).is_multiple_of(self.stride)
    }
}

/// Ground truth for a generated trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_id: Option<String>,
    pub seed: u64,
    pub entries: BTreeMap<u64, ManifestEntry>,
    pub pools: Vec<PoolRange>,
}

impl PlantedManifest {
    fn from_spec(spec: &SyntheticProgramSpec, seed: u64) -> Self {
        let mut entries = BTreeMap::new();
        let mut pools = Vec::new();
        let mut put = |ip: u64, role: &str, class: Difficulty, behavior: usize| {
            entries.insert(ip, ManifestEntry { ip, role: role.to_string(), class, behavior });
        };
        for (i, pb) in spec.behaviors.iter().enumerate() {
            let b = &pb.behavior;
            match b {
                Behavior::Periodic { ip, .. } | Behavior::LoopExit { ip, .. } | Behavior::Phase { ip, .. } => {
                    put(*ip, b.role(), Difficulty::Easy, i)
                }
                Behavior::Biased { ip, p_taken } => {
                    let class = if p_taken.max(1.0 - p_taken) >= 0.99 { Difficulty::Easy } else { Difficulty::H2p };
                    put(*ip, b.role(), class, i)
                }
                Behavior::HistoryCorrelated { ip, positions } => {
                    let class = if positions.len() == 1 { Difficulty::Easy } else { Difficulty::H2p };
                    put(*ip, b.role(), class, i)
                }
                Behavior::DataDependent { ip, gate, .. } => {
                    put(*ip, b.role(), Difficulty::H2p, i);
                    if let Some(g) = gate {
                        put(g.ip, "gate", Difficulty::H2p, i);
                    }
                }
                Behavior::RarePool { base_ip, count, .. } => {
                    pools.push(PoolRange { base_ip: *base_ip, count: *count, stride: 4, behavior: i })
                }
            }
        }
        PlantedManifest { spec_id: spec.id.clone(), seed, entries, pools }
    }

    pub fn class_of(&self, ip: u64) -> Option<Difficulty> {
        if let Some(e) = self.entries.get(&ip) {
            return Some(e.class);
        }
        self.pools.iter().any(|p| p.contains(ip)).then_some(Difficulty::Rare)
    }

    pub fn ips_of_class(&self, class: Difficulty) -> Vec<u64> {
        self.entries.values().filter(|e| e.class == class).map(|e| e.ip).collect()
    }

    pub fn ip_with_role(&self, role: &str) -> Option<u64> {
        self.entries.values().find(|e| e.role == role).map(|e| e.ip)
    }
}

/// Direction preferred by a rare-pool branch; a function of the ip alone so
/// that different seeds model different inputs to the same program.
fn preferred_direction(ip: u64) -> bool {
    let mut z = ip.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) & 1 == 1
}

enum SiteState {
    Periodic { pattern: Vec<bool>, count: usize },
    Stateless,
    DataDependent { value: i64, pending: Option<u32>, armed_now: bool },
    Pool { zipf: Zipf<f64> },
    Phase { next_at: u64, count: u64 },
}

/// Streaming generator; yields exactly `length` instructions.
pub struct TraceGenerator {
    spec: SyntheticProgramSpec,
    rng: ChaCha8Rng,
    chooser: WeightedIndex<f64>,
    filler: Option<Geometric>,
    sites: Vec<SiteState>,
    history: u128,
    buffer: VecDeque<InstructionRecord>,
    last_filler_reg: Option<u8>,
    emitted: u64,
    length: u64,
    manifest: PlantedManifest,
}

impl TraceGenerator {
    pub fn new(spec: &SyntheticProgramSpec, seed: u64, length: u64) -> Result<Self, TraceError> {
        if length == 0 {
            return Err(TraceError::Argument("length must be >= 1".into()));
        }
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chooser = WeightedIndex::new(
            spec.behaviors.iter().map(|b| if matches!(b.behavior, Behavior::Phase { .. }) { 0.0 } else { b.weight }),
        )
            .map_err(|e| TraceError::Argument(format!("bad weights: {e}")))?;
        let filler = if spec.filler_density > 0.0 {
            Some(Geometric::new(1.0 / (spec.filler_density + 1.0)).map_err(|e| TraceError::Argument(e.to_string()))?)
        } else {
            None
        };
        let sites = spec
            .behaviors
            .iter()
            .map(|pb| match &pb.behavior {
                Behavior::Periodic { pattern, .. } => {
                    Ok(SiteState::Periodic { pattern: pattern.chars().map(|c| c == 'T').collect(), count: 0 })
                }
                Behavior::DataDependent { bound, .. } => Ok(SiteState::DataDependent {
                    value: rng.random_range(-*bound..=*bound),
                    pending: None,
                    armed_now: false,
                }),
                Behavior::RarePool { count, exponent, .. } => Ok(SiteState::Pool {
                    zipf: Zipf::new(f64::from(*count), *exponent).map_err(|e| TraceError::Argument(e.to_string()))?,
                }),
                Behavior::Phase { period, .. } => Ok(SiteState::Phase { next_at: *period, count: 0 }),
                _ => Ok(SiteState::Stateless),
            })
            .collect::<Result<Vec<_>, TraceError>>()?;
        Ok(TraceGenerator {
            spec: spec.clone(),
            rng,
            chooser,
            filler,
            sites,
            history: 0,
            buffer: VecDeque::new(),
            last_filler_reg: None,
            emitted: 0,
            length,
            manifest: PlantedManifest::from_spec(spec, seed),
        })
    }

    pub fn manifest(&self) -> &PlantedManifest {
        &self.manifest
    }

    fn push_filler(&mut self, base_ip: u64, n: u64) {
        for k in 0..n {
            let mut rec = InstructionRecord::filler(0, base_ip.wrapping_sub(4 * (n - k)));
            let roll: f64 = self.rng.random();
            let nreads = if roll < 0.2 { 0 } else if roll < 0.8 { 1 } else { 2 };
            for _ in 0..nreads {
                rec.regs_read.push(self.rng.random_range(FILLER_REGS));
            }
            if self.rng.random_bool(0.1) {
                rec.mem_read.push(HEAP_BASE + 8 * self.rng.random_range(0..HEAP_WORDS));
            }
            if self.rng.random_bool(0.05) {
                rec.mem_written.push(HEAP_BASE + 8 * self.rng.random_range(0..HEAP_WORDS));
            }
            let dst = self.rng.random_range(FILLER_REGS);
            rec.regs_written.push((dst, self.rng.random()));
            self.last_filler_reg = Some(dst);
            self.buffer.push_back(rec);
        }
    }

    fn fillers(&mut self, base_ip: u64) {
        let n = match &self.filler {
            Some(g) => g.sample(&mut self.rng),
            None => 0,
        };
        self.push_filler(base_ip, n);
    }

    fn filler_read(&mut self) -> u8 {
        match self.last_filler_reg {
            Some(r) => r,
            None => self.rng.random_range(FILLER_REGS),
        }
    }

    fn push_cond(&mut self, ip: u64, target: u64, taken: bool, regs_read: Vec<u8>) {
        self.history = (self.history << 1) | u128::from(taken);
        self.buffer.push_back(InstructionRecord {
            seq: 0,
            ip,
            branch: Some(BranchInfo { kind: BranchKind::Cond, target, taken }),
            regs_read,
            ..Default::default()
        });
    }

    fn history_bit(&self, position: u32) -> bool {
        (self.history >> (position - 1)) & 1 == 1
    }

    fn emit_data_h2p(&mut self, idx: usize) {
        let (ip, reg, threshold) = match &self.spec.behaviors[idx].behavior {
            Behavior::DataDependent { ip, reg, threshold, .. } => (*ip, *reg, *threshold),
            _ => unreachable!(),
        };
        let value = match &self.sites[idx] {
            SiteState::DataDependent { value, .. } => *value,
            _ => unreachable!(),
        };
        self.fillers(ip);
        self.push_cond(ip, ip + 0x40, value > threshold, vec![reg]);
    }

    /// Emits the site; returns false when the site was skipped.
    fn emit_site(&mut self, idx: usize) -> bool {
        let behavior = self.spec.behaviors[idx].behavior.clone();
        match behavior {
            Behavior::Periodic { ip, .. } => {
                self.fillers(ip);
                let taken = match &mut self.sites[idx] {
                    SiteState::Periodic { pattern, count } => {
                        let t = pattern[*count % pattern.len()];
                        *count += 1;
                        t
                    }
                    _ => unreachable!(),
                };
                let r = self.filler_read();
                self.push_cond(ip, ip + 0x40, taken, vec![r]);
            }
            Behavior::Biased { ip, p_taken } => {
                self.fillers(ip);
                let taken = self.rng.random_bool(p_taken);
                let r = self.filler_read();
                self.push_cond(ip, ip + 0x40, taken, vec![r]);
            }
            Behavior::HistoryCorrelated { ip, positions } => {
                self.fillers(ip);
                let taken = positions.iter().fold(false, |acc, &p| acc ^ self.history_bit(p));
                let r = self.filler_read();
                self.push_cond(ip, ip + 0x40, taken, vec![r]);
            }
            Behavior::DataDependent { ip, reg, bound, step, gate, .. } => {
                if matches!(self.sites[idx], SiteState::DataDependent { pending: Some(_), .. }) {
                    return false;
                }
                let step = step.unwrap_or(bound);
                let delta = if step > 0 { self.rng.random_range(-step..=step) } else { 0 };
                let value = match &mut self.sites[idx] {
                    SiteState::DataDependent { value, .. } => {
                        let mut v = *value + delta;
                        if v > bound {
                            v = 2 * bound - v;
                        } else if v < -bound {
                            v = -2 * bound - v;
                        }
                        *value = v.clamp(-bound, bound);
                        *value
                    }
                    _ => unreachable!(),
                };
                self.fillers(ip.wrapping_sub(8));
                self.buffer.push_back(InstructionRecord {
                    seq: 0,
                    ip: ip.wrapping_sub(8),
                    regs_read: vec![reg],
                    regs_written: vec![(reg, value as u64)],
                    ..Default::default()
                });
                match gate {
                    Some(g) => {
                        self.push_cond(g.ip, g.ip + 0x40, value > g.threshold, vec![reg]);
                        let gap = self.rng.random_range(g.min_gap..=g.max_gap);
                        if let SiteState::DataDependent { pending, armed_now, .. } = &mut self.sites[idx] {
                            *pending = Some(gap);
                            *armed_now = true;
                        }
                    }
                    None => self.emit_data_h2p(idx),
                }
            }
            Behavior::LoopExit { ip, trip } => {
                for k in 0..trip {
                    self.fillers(ip);
                    let r = self.filler_read();
                    self.push_cond(ip, ip.wrapping_sub(0x20), k + 1 < trip, vec![r]);
                }
            }
            Behavior::Phase { .. } => return false,
            Behavior::RarePool { base_ip, bias, .. } => {
                let rank = match &self.sites[idx] {
                    SiteState::Pool { zipf } => zipf.sample(&mut self.rng) as u64,
                    _ => unreachable!(),
                };
                let ip = base_ip + 4 * (rank - 1);
                self.fillers(ip);
                let preferred = preferred_direction(ip);
                let taken = if self.rng.random_bool(bias) { preferred } else { !preferred };
                let r = self.filler_read();
                self.push_cond(ip, ip + 0x40, taken, vec![r]);
            }
        }
        if self.spec.other_branch_rate > 0.0 && self.rng.random_bool(self.spec.other_branch_rate) {
            let k = self.rng.random_range(0..OTHER_BRANCH_SITES);
            let kind = BranchKind::ALL[1 + (k % 4) as usize];
            let ip = OTHER_BRANCH_BASE + 4 * k;
            let regs_read = if kind == BranchKind::Indirect { vec![self.filler_read()] } else { Vec::new() };
            self.buffer.push_back(InstructionRecord {
                seq: 0,
                ip,
                branch: Some(BranchInfo { kind, target: ip + 0x100, taken: true }),
                regs_read,
                ..Default::default()
            });
        }
        true
    }

    fn step(&mut self) {
        let produced = self.emitted + self.buffer.len() as u64;
        for idx in 0..self.sites.len() {
            let fire = match &mut self.sites[idx] {
                SiteState::Phase { next_at, count } if produced >= *next_at => {
                    let Behavior::Phase { period, .. } = self.spec.behaviors[idx].behavior else { unreachable!() };
                    *next_at += period;
                    *count += 1;
                    Some(*count % 2 == 1)
                }
                _ => None,
            };
            if let (Some(taken), Behavior::Phase { ip, .. }) = (fire, &self.spec.behaviors[idx].behavior) {
                let ip = *ip;
                let r = self.filler_read();
                self.push_cond(ip, ip + 0x40, taken, vec![r]);
            }
        }
        for idx in 0..self.sites.len() {
            if matches!(self.sites[idx], SiteState::DataDependent { pending: Some(0), .. }) {
                if let SiteState::DataDependent { pending, .. } = &mut self.sites[idx] {
                    *pending = None;
                }
                self.emit_data_h2p(idx);
            }
        }
        let mut tries = 0;
        loop {
            let idx = self.chooser.sample(&mut self.rng);
            if self.emit_site(idx) {
                break;
            }
            tries += 1;
            if tries > 64 {
                // every selectable site is waiting on a pending H2P
                self.push_filler(0x1000, 1);
                break;
            }
        }
        for site in &mut self.sites {
            if let SiteState::DataDependent { pending: Some(g), armed_now, .. } = site {
                if *armed_now {
                    *armed_now = false;
                } else {
                    *g -= 1;
                }
            }
        }
    }
}

impl Iterator for TraceGenerator {
    type Item = InstructionRecord;

    fn next(&mut self) -> Option<InstructionRecord> {
        if self.emitted >= self.length {
            return None;
        }
        while self.buffer.is_empty() {
            self.step();
        }
        let mut rec = self.buffer.pop_front()?;
        rec.seq = self.emitted;
        self.emitted += 1;
        Some(rec)
    }
}

/// Generates a full instruction trace plus its ground-truth manifest.
pub fn generate_trace(
    spec: &SyntheticProgramSpec,
    seed: u64,
    length: u64,
) -> Result<(InstrTrace, PlantedManifest), TraceError> {
    let gen = TraceGenerator::new(spec, seed, length)?;
    let manifest = gen.manifest().clone();
    let mut trace = InstrTrace::from_records("IT1", gen.collect());
    trace.meta.seed = Some(seed);
    trace.meta.spec_id = spec.id.clone();
    Ok((trace, manifest))
}

/// Same stream as [`generate_trace`] projected to branches, without
/// materializing filler instructions.
pub fn generate_branch_trace(
    spec: &SyntheticProgramSpec,
    seed: u64,
    length: u64,
) -> Result<(BranchTrace, PlantedManifest), TraceError> {
    let gen = TraceGenerator::new(spec, seed, length)?;
    let manifest = gen.manifest().clone();
    let records: Vec<BranchRecord> = gen.filter_map(|r| r.as_branch()).collect();
    let mut trace = BranchTrace::from_records("BT1", records);
    trace.meta = TraceMeta {
        instructions: length,
        seed: Some(seed),
        spec_id: spec.id.clone(),
        ..trace.meta
    };
    Ok((trace, manifest))
}

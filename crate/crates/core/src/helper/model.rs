use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::trace::BranchTrace;

pub const MIN_TRAINING_SAMPLES: usize = 1_000;
pub const MAX_PATTERN_BITS: u16 = 64;
const PERCEPTRON_EPOCHS: usize = 20;
const PERCEPTRON_WEIGHT_BITS: u8 = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrainingError {
    #[error("branch {ip:#x} has {found} training samples, at least {MIN_TRAINING_SAMPLES} are needed")]
    InsufficientSamples { ip: u64, found: usize },
    #[error("{0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HelperKind {
    PatternTable,
    Perceptron,
}

impl HelperKind {
    pub fn code(self) -> u8 {
        match self {
            HelperKind::PatternTable => 0,
            HelperKind::Perceptron => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(HelperKind::PatternTable),
            1 => Some(HelperKind::Perceptron),
            _ => None,
        }
    }
}

impl std::str::FromStr for HelperKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pattern-table" | "pattern_table" => Ok(HelperKind::PatternTable),
            "perceptron" => Ok(HelperKind::Perceptron),
            _ => Err(format!("unknown helper kind `{s}` (expected pattern-table or perceptron)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum HelperParams {
    /// History pattern (bit 0 = most recent direction) to (taken, not taken)
    /// counts.
    PatternTable(BTreeMap<u64, (u32, u32)>),
    /// Bias first, then one weight per history position.
    Perceptron { weight_bits: u8, weights: Vec<i16> },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Provenance {
    pub trace_id: String,
    pub input_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HelperModel {
    pub ip: u64,
    pub history: u16,
    pub params: HelperParams,
    /// Minimum confidence at which the helper overrides the baseline.
    pub tau: f32,
    pub provenance: Vec<Provenance>,
}

impl HelperModel {
    pub fn kind(&self) -> HelperKind {
        match self.params {
            HelperParams::PatternTable(_) => HelperKind::PatternTable,
            HelperParams::Perceptron { .. } => HelperKind::Perceptron,
        }
    }

    pub fn with_tau(mut self, tau: f32) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(format!("tau {} outside [0, 1]", self.tau));
        }
        if self.history == 0 || self.history > MAX_PATTERN_BITS {
            return Err(format!("history length {} outside 1..={MAX_PATTERN_BITS}", self.history));
        }
        match &self.params {
            HelperParams::PatternTable(t) => {
                let mask = mask(self.history);
                if t.keys().any(|k| k & !mask != 0) {
                    return Err("pattern key wider than the history length".into());
                }
            }
            HelperParams::Perceptron { weight_bits, weights } => {
                if !(2..=16).contains(weight_bits) {
                    return Err(format!("weight width {weight_bits} outside 2..=16"));
                }
                if weights.len() != usize::from(self.history) + 1 {
                    return Err("perceptron weight count must be history + 1".into());
                }
                let (lo, hi) = bounds(*weight_bits);
                if weights.iter().any(|&w| w < lo || w > hi) {
                    return Err("perceptron weight out of range".into());
                }
            }
        }
        Ok(())
    }

    /// Direction and confidence in [0, 1] for a global history whose bit 0
    /// is the most recent direction; `None` for an unseen pattern.
    pub fn predict(&self, history: u64) -> Option<(bool, f64)> {
        let h = history & mask(self.history);
        match &self.params {
            HelperParams::PatternTable(t) => {
                let &(tk, nt) = t.get(&h)?;
                let total = f64::from(tk) + f64::from(nt);
                (total > 0.0).then(|| (tk >= nt, (f64::from(tk) - f64::from(nt)).abs() / total))
            }
            HelperParams::Perceptron { weights, .. } => {
                let y = perceptron_output(weights, h);
                Some((y >= 0, (y.unsigned_abs() as f64 / theta(self.history)).min(1.0)))
            }
        }
    }
}

fn mask(h: u16) -> u64 {
    if h >= 64 {
        u64::MAX
    } else {
        (1u64 << h) - 1
    }
}

fn bounds(bits: u8) -> (i16, i16) {
    let hi = ((1i32 << (bits - 1)) - 1) as i16;
    (-hi - 1, hi)
}

fn theta(h: u16) -> f64 {
    (1.93 * f64::from(h) + 14.0).floor()
}

fn perceptron_output(weights: &[i16], h: u64) -> i64 {
    weights[1..].iter().enumerate().fold(i64::from(weights[0]), |y, (j, &w)| {
        if (h >> j) & 1 == 1 {
            y + i64::from(w)
        } else {
            y - i64::from(w)
        }
    })
}

#[derive(Debug, Clone)]
pub struct CorpusTrace {
    pub trace_id: String,
    pub input_id: String,
    pub trace: BranchTrace,
}

/// Traces of one program over several inputs.
#[derive(Debug, Clone, Default)]
pub struct TrainingCorpus {
    pub traces: Vec<CorpusTrace>,
}

impl TrainingCorpus {
    pub fn push(&mut self, trace_id: impl Into<String>, input_id: impl Into<String>, trace: BranchTrace) {
        self.traces.push(CorpusTrace { trace_id: trace_id.into(), input_id: input_id.into(), trace });
    }

    /// (history, outcome) at every conditional execution of `ip`, where
    /// history holds the preceding conditional directions, most recent in
    /// bit 0.
    pub fn samples(&self, ip: u64) -> Vec<(u64, bool)> {
        let mut out = Vec::new();
        for t in &self.traces {
            let mut hist = 0u64;
            for r in t.trace.cond_records() {
                if r.ip == ip {
                    out.push((hist, r.taken));
                }
                hist = (hist << 1) | u64::from(r.taken);
            }
        }
        out
    }

    pub fn provenance(&self) -> Vec<Provenance> {
        self.traces.iter().map(|t| Provenance { trace_id: t.trace_id.clone(), input_id: t.input_id.clone() }).collect()
    }
}

pub fn train_helper(corpus: &TrainingCorpus, ip: u64, kind: HelperKind, history: u16, seed: u64) -> Result<HelperModel, TrainingError> {
    if history == 0 || history > MAX_PATTERN_BITS {
        return Err(TrainingError::Argument(format!("history length must be in 1..={MAX_PATTERN_BITS}")));
    }
    let samples = corpus.samples(ip);
    if samples.len() < MIN_TRAINING_SAMPLES {
        return Err(TrainingError::InsufficientSamples { ip, found: samples.len() });
    }
    let m = mask(history);
    let params = match kind {
        HelperKind::PatternTable => {
            let mut table: BTreeMap<u64, (u32, u32)> = BTreeMap::new();
            for &(h, taken) in &samples {
                let e = table.entry(h & m).or_default();
                if taken {
                    e.0 = e.0.saturating_add(1);
                } else {
                    e.1 = e.1.saturating_add(1);
                }
            }
            HelperParams::PatternTable(table)
        }
        HelperKind::Perceptron => {
            let (lo, hi) = bounds(PERCEPTRON_WEIGHT_BITS);
            let th = theta(history) as i64;
            let mut weights = vec![0i16; usize::from(history) + 1];
            let mut order: Vec<usize> = (0..samples.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..PERCEPTRON_EPOCHS {
                order.shuffle(&mut rng);
                let mut wrong = 0;
                for &i in &order {
                    let (h, taken) = samples[i];
                    let h = h & m;
                    let y = perceptron_output(&weights, h);
                    if (y >= 0) != taken {
                        wrong += 1;
                    }
                    if (y >= 0) != taken || y.abs() <= th {
                        let step = |w: i16, up: bool| if up { (w + 1).min(hi) } else { (w - 1).max(lo) };
                        weights[0] = step(weights[0], taken);
                        for j in 0..usize::from(history) {
                            weights[j + 1] = step(weights[j + 1], ((h >> j) & 1 == 1) == taken);
                        }
                    }
                }
                if wrong == 0 {
                    break;
                }
            }
            HelperParams::Perceptron { weight_bits: PERCEPTRON_WEIGHT_BITS, weights }
        }
    };
    Ok(HelperModel { ip, history, params, tau: 0.0, provenance: corpus.provenance() })
}

/// Trains one helper per ip in parallel.
pub fn train_helpers(
    corpus: &TrainingCorpus,
    ips: &[u64],
    kind: HelperKind,
    history: u16,
    seed: u64,
) -> Vec<Result<HelperModel, TrainingError>> {
    ips.par_iter().map(|&ip| train_helper(corpus, ip, kind, history, seed)).collect()
}
